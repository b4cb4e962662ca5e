"""Independent O(n^2) reference implementations used to check the fast paths."""
import math


def auc_pairs(scores, mis):
    num = den = 0.0
    for si, mi in zip(scores, mis):
        if mi:
            continue
        for sj, mj in zip(scores, mis):
            if not mj:
                continue
            den += 1
            num += 1.0 if si < sj else 0.5 if si == sj else 0.0
    return num / den


def c_index_pairs(scores, deltas):
    num = den = 0.0
    n = len(scores)
    for i in range(n):
        for j in range(n):
            if deltas[i] < deltas[j]:
                den += 1
                num += 1.0 if scores[i] < scores[j] else 0.5 if scores[i] == scores[j] else 0.0
    return num / den


def kendall_b_pairs(a, b):
    conc = disc = ta = tb = 0
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            da = a[i] - a[j]
            db = b[i] - b[j]
            if da == 0 and db == 0:
                continue
            if da == 0:
                ta += 1
            elif db == 0:
                tb += 1
            elif (da > 0) == (db > 0):
                conc += 1
            else:
                disc += 1
    return (conc - disc) / math.sqrt((conc + disc + ta) * (conc + disc + tb))


def prefix_error_mean(mis_in_order):
    """Mean over k of the error rate among the first k samples."""
    total = 0.0
    errors = 0
    for k, m in enumerate(mis_in_order, start=1):
        errors += m
        total += errors / k
    return total / len(mis_in_order)


def sublevel_risks(scores, indicators):
    """Risk at every distinct score threshold, by direct filtering."""
    out = []
    for beta in sorted(set(scores)):
        inside = [ind for s, ind in zip(scores, indicators) if s <= beta]
        out.append((beta, sum(inside) / len(inside), len(inside) / len(scores)))
    return out
