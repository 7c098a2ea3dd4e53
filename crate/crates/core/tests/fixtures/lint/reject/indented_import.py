if len(heart_rate) > 3:
    import math
    result = {"n": len(heart_rate)}
else:
    result = {"n": 0}
interpretation = "Count."
