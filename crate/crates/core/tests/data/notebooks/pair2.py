def clean(text):
    out = []
    for ch in text:
        if ch.isalnum() or ch == " ":
            out.append(ch.lower())
    return "".join(out)


def tokens(text):
    return [t for t in clean(text).split() if len(t) > 2]


counts = {}
for t in tokens("The quick brown fox, the lazy dog!"):
    counts[t] = counts.get(t, 0) + 1
