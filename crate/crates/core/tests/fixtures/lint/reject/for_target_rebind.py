total = 0
for temperature in [36.5, 37.0]:
    total += temperature
result = {"total": total}
interpretation = "Sum."
