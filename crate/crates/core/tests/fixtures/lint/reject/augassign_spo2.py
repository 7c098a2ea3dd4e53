spo2 += [("2024-01-01T00:00:00Z", 99.0)]
result = {"n": len(spo2)}
interpretation = "Padded."
