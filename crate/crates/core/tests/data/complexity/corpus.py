import functools


def constant():
    return 42


def sign(x):
    if x > 0:
        return 1
    elif x < 0:
        return -1
    else:
        return 0


def total(items):
    s = 0
    for item in items:
        s += item
    return s


def find_first_negative(values):
    i = 0
    while i < len(values):
        if values[i] < 0:
            return i
        i += 1
    return -1


def in_range(x, lo, hi):
    return x >= lo and x <= hi or x is None


def parse_int(text):
    try:
        return int(text)
    except ValueError:
        return None
    except TypeError:
        return 0
    finally:
        pass


def abs_value(x):
    return x if x >= 0 else -x


def evens(values):
    return [v for v in values if v % 2 == 0]


def describe(flag):
    # if this were real we would loop for a while
    message = "if and or while for"
    return f"{message}: {flag}"


def http_status(code):
    match code:
        case 200:
            return "ok"
        case 404:
            return "missing"


def outer(values):
    def keep(v):
        return v is not None and v > 0

    result = []
    for v in values:
        if keep(v):
            result.append(v)
    return result


class Account:
    balance = 0

    def withdraw(self, amount):
        if amount <= 0 or amount > self.balance:
            raise ValueError("bad amount")
        self.balance -= amount


def eligible(user):
    return (
        user.active
        and user.age >= 18
        and not user.banned
    )


def grid_search(rows, target):
    for r, row in enumerate(rows):
        for c, value in enumerate(row):
            if value == target:
                return (r, c)
    return None


async def drain(queue):
    count = 0
    async for item in queue:
        if item is None:
            break
        count += 1
    return count


@functools.cache
def pick(items, key=None):
    key = key or (lambda x: x)
    return sorted(items, key=key)
