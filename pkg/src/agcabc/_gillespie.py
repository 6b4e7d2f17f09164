"""Compiled Gillespie kernel for the stochastic Lotka-Volterra model."""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _fill(out, r, j, x, y):
    for jj in range(j, out.shape[1]):
        out[r, jj, 0] = x
        out[r, jj, 1] = y


@numba.njit(cache=True)
def lv_records(theta, seeds, x0, y0, dt_record, max_events, out, truncated):
    """Simulate one trajectory per row of ``theta`` into ``out[r, :, :]``.

    Event propensities, with ``X`` predators and ``Y`` prey:
    predator birth ``exp(t1) X Y``, predator death ``exp(t2) X``,
    prey birth ``exp(t3) Y`` and predation ``exp(t1) X Y``.
    Records are taken at ``j * dt_record``. Once one species is extinct the
    other evolves as a pure birth (Yule) or pure death process, which is
    advanced in closed form between record times.
    """
    n_records = out.shape[1]
    for r in range(theta.shape[0]):
        np.random.seed(seeds[r])
        a = math.exp(theta[r, 0])
        b = math.exp(theta[r, 1])
        c = math.exp(theta[r, 2])
        x = x0
        y = y0
        t = 0.0
        events = 0
        j = 0
        truncated[r] = False
        while j < n_records:
            if events >= max_events:
                _fill(out, r, j, x, y)
                truncated[r] = True
                break
            if x == 0 or y == 0:
                while j < n_records:
                    delta = j * dt_record - t
                    if delta > 0.0:
                        if x > 0:
                            deaths = np.random.binomial(x, -math.expm1(-b * delta))
                            x -= deaths
                            events += deaths
                        elif y > 0:
                            births = np.random.negative_binomial(y, math.exp(-c * delta))
                            if events + births > max_events:
                                y += max_events - events
                                events = max_events
                                _fill(out, r, j, x, y)
                                truncated[r] = True
                                j = n_records
                                break
                            y += births
                            events += births
                        t = j * dt_record
                    out[r, j, 0] = x
                    out[r, j, 1] = y
                    j += 1
                break
            pred = a * x * y
            death = b * x
            birth = c * y
            total = 2.0 * pred + death + birth
            t_new = t - math.log(1.0 - np.random.random()) / total
            while j < n_records and j * dt_record < t_new:
                out[r, j, 0] = x
                out[r, j, 1] = y
                j += 1
            if j >= n_records:
                break
            u = np.random.random() * total
            if u < pred:
                x += 1
            elif u < pred + death:
                x -= 1
            elif u < pred + death + birth:
                y += 1
            else:
                y -= 1
            t = t_new
            events += 1
