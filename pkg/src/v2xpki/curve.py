"""NIST P-256 group arithmetic.

Plain-Python implementation backing the crypto layer: Jacobian-coordinate
point operations, windowed scalar multiplication with a precomputed
base-point table, and SEC1 compressed-point encoding.

Points are affine (x, y) tuples, or None for the point at infinity.
Scalars are plain ints. This is not a constant-time implementation; it
targets desk-scale tooling, not production signing hardware.
"""

P = 0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF
A = P - 3
B = 0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B
N = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5
G = (GX, GY)

COORD_BYTES = 32
POINT_BYTES = 33  # SEC1 compressed

_JAC_INF = (1, 1, 0)


def is_on_curve(point) -> bool:
    if point is None:
        return True
    x, y = point
    if not (0 <= x < P and 0 <= y < P):
        return False
    return (y * y - (x * x * x + A * x + B)) % P == 0


def _jac_double(pt):
    # dbl-2001-b formulas, specialised for a = -3
    x1, y1, z1 = pt
    if not z1 or not y1:
        return _JAC_INF
    delta = z1 * z1 % P
    gamma = y1 * y1 % P
    beta = x1 * gamma % P
    alpha = 3 * (x1 - delta) * (x1 + delta) % P
    x3 = (alpha * alpha - 8 * beta) % P
    z3 = ((y1 + z1) * (y1 + z1) - gamma - delta) % P
    y3 = (alpha * (4 * beta - x3) - 8 * gamma * gamma) % P
    return (x3, y3, z3)


def _jac_add(p, q):
    x1, y1, z1 = p
    x2, y2, z2 = q
    if not z1:
        return q
    if not z2:
        return p
    z1z1 = z1 * z1 % P
    z2z2 = z2 * z2 % P
    u1 = x1 * z2z2 % P
    u2 = x2 * z1z1 % P
    s1 = y1 * z2 * z2z2 % P
    s2 = y2 * z1 * z1z1 % P
    h = (u2 - u1) % P
    r = (s2 - s1) % P
    if h == 0:
        if r == 0:
            return _jac_double(p)
        return _JAC_INF
    hh = h * h % P
    hhh = h * hh % P
    v = u1 * hh % P
    x3 = (r * r - hhh - 2 * v) % P
    y3 = (r * (v - x3) - s1 * hhh) % P
    z3 = z1 * z2 * h % P
    return (x3, y3, z3)


def _to_jac(point):
    if point is None:
        return _JAC_INF
    return (point[0], point[1], 1)


def _to_affine(jac):
    x, y, z = jac
    if not z:
        return None
    zi = pow(z, -1, P)
    zi2 = zi * zi % P
    return (x * zi2 % P, y * zi2 * zi % P)


def point_add(p, q):
    if p is None:
        return q
    if q is None:
        return p
    return _to_affine(_jac_add(_to_jac(p), _to_jac(q)))


def point_neg(point):
    if point is None:
        return None
    x, y = point
    return (x, (P - y) % P)


def scalar_mult(k: int, point):
    """k * point via a 4-bit window over Jacobian coordinates."""
    if point is None:
        return None
    k %= N
    if k == 0:
        return None
    base = _to_jac(point)
    table = [None] * 16
    table[1] = base
    table[2] = _jac_double(base)
    for i in range(3, 16):
        table[i] = _jac_add(table[i - 1], base)
    acc = _JAC_INF
    started = False
    for shift in range(252, -4, -4):
        if started:
            acc = _jac_double(_jac_double(_jac_double(_jac_double(acc))))
        nib = (k >> shift) & 0xF
        if nib:
            acc = _jac_add(acc, table[nib])
            started = True
    return _to_affine(acc)


_BASE_TABLE = None


def _base_table():
    # tables[i][b] = (b << 8i) * G in Jacobian form, built lazily once
    global _BASE_TABLE
    if _BASE_TABLE is None:
        tables = []
        block = _to_jac(G)
        for _ in range(32):
            row = [None] * 256
            row[1] = block
            for v in range(2, 256):
                row[v] = _jac_add(row[v - 1], block)
            tables.append(row)
            block = _jac_add(row[255], block)
        _BASE_TABLE = tables
    return _BASE_TABLE


def base_mult(k: int):
    """k * G using the precomputed byte-window table."""
    k %= N
    if k == 0:
        return None
    tables = _base_table()
    acc = _JAC_INF
    i = 0
    while k:
        b = k & 0xFF
        if b:
            acc = _jac_add(acc, tables[i][b])
        k >>= 8
        i += 1
    return _to_affine(acc)


def encode_point(point) -> bytes:
    """SEC1 compressed encoding, 33 bytes."""
    if point is None:
        raise ValueError("cannot encode the point at infinity")
    x, y = point
    return bytes([0x02 | (y & 1)]) + x.to_bytes(COORD_BYTES, "big")


def decode_point(data: bytes):
    """Inverse of encode_point. Raises ValueError on anything invalid."""
    if len(data) != POINT_BYTES:
        raise ValueError(f"compressed point must be {POINT_BYTES} bytes, got {len(data)}")
    if data[0] not in (0x02, 0x03):
        raise ValueError(f"bad compressed-point prefix 0x{data[0]:02x}")
    x = int.from_bytes(data[1:], "big")
    if x >= P:
        raise ValueError("x coordinate out of field range")
    y_sq = (x * x * x + A * x + B) % P
    y = pow(y_sq, (P + 1) // 4, P)
    if y * y % P != y_sq:
        raise ValueError("x coordinate is not on the curve")
    if (y & 1) != (data[0] & 1):
        y = P - y
    return (x, y)
