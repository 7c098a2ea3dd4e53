low = [v for _, v in spo2 if v <= 92]
flag = len(low) == 0
result = {"low_count": len(low), "all_ok": flag}
interpretation = "Counted low saturation readings."
