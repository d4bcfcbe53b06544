"""Textbook affine secp256k1 arithmetic, for cross-checking only.

Slow and not constant time. Shares nothing with the library under test.
"""
P = 2**256 - 2**32 - 977
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
G = (
    0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
)
INF = None


def on_curve(pt):
    if pt is INF:
        return False
    x, y = pt
    return (y * y - x * x * x - 7) % P == 0


def add(p1, p2):
    if p1 is INF:
        return p2
    if p2 is INF:
        return p1
    (x1, y1), (x2, y2) = p1, p2
    if x1 == x2 and (y1 + y2) % P == 0:
        return INF
    if p1 == p2:
        lam = 3 * x1 * x1 * pow(2 * y1, -1, P) % P
    else:
        lam = (y2 - y1) * pow(x2 - x1, -1, P) % P
    x3 = (lam * lam - x1 - x2) % P
    return x3, (lam * (x1 - x3) - y1) % P


def neg(pt):
    return INF if pt is INF else (pt[0], -pt[1] % P)


def mul(k, pt=G):
    """Left-to-right double-and-add."""
    acc = INF
    for bit in bin(k % N)[2:]:
        acc = add(acc, acc)
        if bit == "1":
            acc = add(acc, pt)
    return acc


def compress(pt):
    x, y = pt
    return bytes([2 + (y & 1)]) + x.to_bytes(32, "big")


def decompress(data):
    x = int.from_bytes(data[1:], "big")
    y = pow((x ** 3 + 7) % P, (P + 1) // 4, P)
    if y & 1 != data[0] & 1:
        y = P - y
    return x, y
