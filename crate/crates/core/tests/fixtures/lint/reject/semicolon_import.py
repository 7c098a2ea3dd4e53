x = 1; import sys
result = {"x": x}
interpretation = "One."
