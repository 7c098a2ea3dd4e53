note = "do not import anything; heart_rate = fixed"
# import numpy would fail here
vals = np.array([v for _, v in heart_rate])
result = {"note": note, "sd": float(np.std(vals))}
interpretation = "Mentions of import inside strings and comments are fine."
