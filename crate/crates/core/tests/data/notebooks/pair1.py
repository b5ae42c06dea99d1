import csv


def load(path):
    with open(path) as f:
        return list(csv.DictReader(f))


rows = load("grades.csv")


def average(rows, column):
    values = [float(r[column]) for r in rows if r[column]]
    return sum(values) / len(values) if values else 0.0


print(average(rows, "score"))
