"""Independent reference computations used to freeze expected values.

Nothing here imports the package under test.
"""

import numpy as np


def remez_minimax(f, a, b, degree, n_dense=20001, max_iter=100, tol=1e-13):
    """Best uniform polynomial approximation of ``f`` on a dense grid of [a, b].

    Classical single-interval exchange algorithm with a Chebyshev basis on
    the mapped variable. Returns ``(levelled_error, max_error_on_grid)``;
    at convergence the two agree to ``tol`` relative.
    """
    xs = np.linspace(a, b, n_dense)
    ts = (2 * xs - (a + b)) / (b - a)
    fx = f(xs)
    n = degree + 2
    # Chebyshev extrema as the initial reference
    ref = np.searchsorted(ts, -np.cos(np.pi * np.arange(n) / (n - 1)))
    ref = np.clip(ref, 0, n_dense - 1)
    levelled = max_err = np.nan
    for _ in range(max_iter):
        tr = ts[ref]
        M = np.empty((n, n))
        M[:, :-1] = np.polynomial.chebyshev.chebvander(tr, degree)
        M[:, -1] = (-1.0) ** np.arange(n)
        sol = np.linalg.solve(M, fx[ref])
        coef, levelled = sol[:-1], abs(sol[-1])
        err = fx - np.polynomial.chebyshev.chebval(ts, coef)
        max_err = np.max(np.abs(err))
        if max_err - levelled <= tol * max_err:
            break
        ref = _exchange(err, n)
    return levelled, max_err


def _exchange(err, n):
    # split the error curve into sign runs and keep the extremum of each
    sign = np.sign(err)
    sign[sign == 0] = 1
    breaks = np.flatnonzero(np.diff(sign)) + 1
    runs = np.split(np.arange(len(err)), breaks)
    peaks = [r[np.argmax(np.abs(err[r]))] for r in runs]
    # drop the smallest peaks, from the ends, until n alternating points remain
    while len(peaks) > n:
        if abs(err[peaks[0]]) < abs(err[peaks[-1]]):
            peaks.pop(0)
        else:
            peaks.pop()
    return np.array(peaks)


def inverse_minimax_closed_form(degree):
    """Closed-form minimax error of 1/x on [0.5, 1.5] (Chebyshev's formula).

    On t in [-1, 1], 1/x = 2/(t + 2); for 1/(alpha - t) with alpha > 1 the
    best error of degree n is (alpha - sqrt(alpha^2 - 1))^n / (alpha^2 - 1).
    """
    alpha = 2.0
    return 2.0 * (alpha - np.sqrt(alpha**2 - 1)) ** degree / (alpha**2 - 1)


# Dense-grid exchange-algorithm minimax errors of 1/x on [0.5, 1.5], frozen
# from ``remez_minimax`` before the synthesis code was written.
FROZEN_MINIMAX = {
    2: 0.047864513006984064,
    4: 0.003436517363608007,
    8: 1.7714474998106522e-05,
    16: 4.707037861753815e-10,
}


if __name__ == "__main__":
    for D in (0, 1, 2, 4, 8, 16):
        lev, mx = remez_minimax(lambda x: 1.0 / x, 0.5, 1.5, D)
        print(D, repr(lev), repr(mx), repr(inverse_minimax_closed_form(D)))
