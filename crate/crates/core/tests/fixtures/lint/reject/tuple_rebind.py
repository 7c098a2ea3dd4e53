age, gender = 40, "F"
result = {"age": age}
interpretation = "Overwrote demographics."
