def maximum(xs):
    """Largest element of a list."""
    best = xs[0]
    for x in xs:
        if x > best:
            best = x
    return best


def minimum(xs):
    """Smallest element of a list."""
    best = xs[0]
    for x in xs:
        if x < best:
            best = x
    return best


def total(xs):
    """Sum all values in a list."""
    s = 0
    for x in xs:
        s += x
    return s


def mean(xs):
    """Arithmetic mean of a list."""
    return sum(xs) / len(xs)
