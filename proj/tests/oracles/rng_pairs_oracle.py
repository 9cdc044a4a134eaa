"""Reference values for the RNG and pair-selection tests.

Independent Python implementation of SplitMix64 -> xoshiro256** and of the
greedy independent-pair selection. Run once; outputs are frozen into
tests/test_rng.cpp and tests/test_transform.cpp.
"""

MASK = (1 << 64) - 1


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro:
    def __init__(self, seed):
        st = seed & MASK
        self.s = []
        for _ in range(4):
            st, out = splitmix64(st)
            self.s.append(out)

    def next(self):
        s = self.s
        result = (rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def below(self, n):
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next()
            if r >= threshold:
                return r % n


def shuffle(items, rng):
    items = list(items)
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]
    return items


def select_pairs(g, K, N, rng):
    pairs = [(i, j) for i in range(g) for j in range(i + 1, g)]
    pairs = shuffle(pairs, rng)
    available = {p for p in pairs}
    out = []
    for _ in range(K):
        used = set()
        cur = []
        for (i, j) in pairs:
            if len(cur) == N:
                break
            if (i, j) not in available or i in used or j in used:
                continue
            cur.append((i, j))
            used.update((i, j))
            available.discard((i, j))
        out.append(cur)
    return out


if __name__ == "__main__":
    for seed in (0, 42):
        r = Xoshiro(seed)
        print("seed", seed, [hex(r.next()) for _ in range(8)])
    print("shuffle seed 7 [0..9]:", shuffle(range(10), Xoshiro(7)))
    print("pairs g=4 K=3 N=2 seed 0:", select_pairs(4, 3, 2, Xoshiro(0)))
    print("pairs g=6 K=4 N=3 seed 5:", select_pairs(6, 4, 3, Xoshiro(5)))
