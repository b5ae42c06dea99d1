def classify(temperature):
    if temperature < 0:
        return "freezing"
    elif temperature < 15:
        return "cold"
    elif temperature < 25:
        return "mild"
    return "hot"


def summary(readings):
    labels = {}
    for r in readings:
        try:
            label = classify(float(r))
        except ValueError:
            continue
        labels[label] = labels.get(label, 0) + 1
    return labels
