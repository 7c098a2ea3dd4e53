from scipy import stats as st
result = {"slope": 0.0}
interpretation = "Flat."
