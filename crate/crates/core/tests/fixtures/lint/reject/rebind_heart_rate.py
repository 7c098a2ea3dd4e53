heart_rate = [(t, v) for t, v in heart_rate if v < 200]
result = {"n": len(heart_rate)}
interpretation = "Filtered count."
