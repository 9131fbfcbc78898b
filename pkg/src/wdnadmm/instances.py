"""Small synthetic networks and scenarios for tests, demos and benchmarks."""

import numpy as np

from .network import Link, Network, Scenario

LPS = 1e-3


def single_pipe(length=100.0, diameter=0.1, hw_coeff=100.0, min_pressure=0.0):
    """Source ``S`` feeding junction ``1`` through one pipe."""
    return Network(["1"], ["S"], [0.0], [Link("S", "1", "pipe", length, diameter, hw_coeff)],
                   min_pressure=min_pressure, name="single-pipe")


def pcv_line(min_pressure=15.0):
    """Source -> PCV valve -> junction ``1`` -> pipe -> junction ``2``."""
    links = [Link("S", "1", "valve", diameter=0.15, loss_coeff=1.0, name="pcv"),
             Link("1", "2", "pipe", 300.0, 0.1, 100.0, name="p1")]
    return Network(["1", "2"], ["S"], [5.0, 8.0], links, pcv_links=[0],
                   min_pressure=min_pressure, name="pcv-line")


def parallel_pipes(length=200.0, diameter=0.1):
    """Two identical pipes from the source to junction ``1``."""
    links = [Link("S", "1", "pipe", length, diameter, 110.0, name="a"),
             Link("S", "1", "pipe", length, diameter, 110.0, name="b")]
    return Network(["1"], ["S"], [0.0], links, name="parallel")


def series_chain(n=5):
    links = [Link("S", "1", "pipe", 150.0, 0.15, 120.0)]
    links += [Link(str(i), str(i + 1), "pipe", 100.0 + 10 * i, 0.1, 110.0) for i in range(1, n)]
    return Network([str(i) for i in range(1, n + 1)], ["S"], np.linspace(0, 4, n), links,
                   name="chain")


def triangle_loop():
    """Three junctions in a loop plus a source: four links."""
    links = [Link("S", "1", "pipe", 300.0, 0.2, 120.0),
             Link("1", "2", "pipe", 250.0, 0.1, 100.0),
             Link("2", "3", "pipe", 200.0, 0.1, 100.0),
             Link("1", "3", "pipe", 350.0, 0.1, 100.0)]
    return Network(["1", "2", "3"], ["S"], [0.0, 2.0, 1.0], links, name="triangle")


def grid(rows=3, cols=3):
    """Rectangular grid of junctions fed by two sources at opposite corners."""
    ids = [f"{r}{c}" for r in range(rows) for c in range(cols)]
    links = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                links.append(Link(f"{r}{c}", f"{r}{c + 1}", "pipe", 120.0 + 7 * r, 0.1, 100.0))
            if r + 1 < rows:
                links.append(Link(f"{r}{c}", f"{r + 1}{c}", "pipe", 140.0 + 5 * c, 0.1, 100.0))
    links.append(Link("S1", ids[0], "pipe", 200.0, 0.2, 120.0))
    links.append(Link("S2", ids[-1], "valve", diameter=0.15, loss_coeff=2.0))
    return Network(ids, ["S1", "S2"], np.zeros(len(ids)), links, name="grid")


def toy_control(min_pressure=15.0, afv_max_flow=10 * LPS):
    """Three-junction looped network with one PCV and one AFV.

    The PCV sits on the inlet valve ``S -> 1`` and throttles the whole zone;
    the flushing valve discharges at junction ``3`` at the far end of the
    loop ``1 -> 2 -> 3``, ``1 -> 3``.
    """
    links = [Link("S", "1", "valve", diameter=0.2, loss_coeff=1.0, name="pcv"),
             Link("1", "2", "pipe", 300.0, 0.1, 100.0, name="p12"),
             Link("2", "3", "pipe", 300.0, 0.1, 100.0, name="p23"),
             Link("1", "3", "pipe", 500.0, 0.1, 100.0, name="p13")]
    return Network(["1", "2", "3"], ["S"], [10.0, 12.0, 14.0], links,
                   pcv_links=[0], afv_nodes=[2], min_pressure=min_pressure,
                   afv_max_flow=afv_max_flow, name="toy-control")


def toy_scenario(network=None, n_t=4, scc_window=(3,), source_head=50.0, base=None):
    """Diurnal-like demand pattern with the peak inside the SCC window.

    Window steps beyond ``n_t`` are dropped.
    """
    network = network or toy_control()
    if base is None:
        base = np.full(network.n_n, 1.5 * LPS)
    pattern = np.array([0.6, 1.0, 1.6, 0.9, 0.7, 1.2, 1.4, 0.8])
    mult = np.resize(pattern, n_t)
    demands = mult[:, None] * np.asarray(base)[None, :]
    heads = np.full((n_t, network.n_0), source_head)
    return Scenario(demands, heads, frozenset(t for t in scc_window if t <= n_t), step_minutes=60.0)


def random_scenario(network, n_t, rng, scale=1.0 * LPS, source_head=50.0):
    demands = rng.uniform(0.2, 1.5, size=(n_t, network.n_n)) * scale
    heads = source_head + rng.uniform(-1.0, 1.0, size=(n_t, network.n_0))
    return Scenario(demands, heads, frozenset(), step_minutes=60.0)


def toy_networks():
    """The hydraulic test bed: 2 to 10 nodes (sources included), with loops and parallel pipes."""
    return [single_pipe(), parallel_pipes(), series_chain(5), triangle_loop(), grid(2, 4), toy_control()]
