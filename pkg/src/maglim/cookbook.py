"""Ready-to-run configuration templates for the desk-scale checks."""

from __future__ import annotations

_COMMON_TAIL = """
[sampling]
# metropolis | heatbath | wolff | sw
algorithm = {algorithm}
n_equil = {n_equil}
n_meas = {n_meas}
thin = {thin}
chains = {chains}
seed = {seed}
# write raw binary snapshots (sample kind only)
dump = false
"""

_TEMPLATES = {
    "tail": dict(
        doc="Tail exponent 16 through the MGF exponent: synthetic Tauberian pipeline on a density "
            "exp(-|x|^16); the fitted MGF exponent should be 16/15.",
        kind="kasahara-selftest", L="1", a="1", bc="free", h="0", t_grid="", h_grid="", eps="0.125", M="20",
        lam="2", exponent="1.875", inner="0.25", outer="1", alpha_prime="16", max_annuli="-1",
        algorithm="sw", n_equil="0", n_meas="200000", thin="1", chains="1", seed="1",
    ),
    "free-energy": dict(
        doc="f_L(t) = L^-2 log E[exp(t m_L)] by thermodynamic integration at fixed mesh a = 1; Plus must be "
            "dyadic-decreasing and Minus dyadic-increasing in L, and the log-log slope is fitted on the largest L.",
        kind="free-energy", L="8,16,32,64", a="1", bc="plus,minus,free", h="0", t_grid="0.25,0.5,1,2,4",
        h_grid="", eps="0.125", M="20", lam="2", exponent="1.875", inner="0.25", outer="1", alpha_prime="16",
        max_annuli="-1", algorithm="sw", n_equil="200", n_meas="1000", thin="1", chains="1", seed="1",
    ),
    "charfn": dict(
        doc="Characteristic function of the unit-square magnetization: plain average and FK cosine-product "
            "estimator on a log grid of t, with the stretch-exponent fit of log(-log|E|).",
        kind="charfn", L="1", a="1/128", bc="free", h="0",
        t_grid="0,1,1.26,1.58,2,2.51,3.16,3.98,5.01,6.31,7.94,10,12.6,15.8,20,25.1,31.6,39.8,50.1,63.1,79.4,100",
        h_grid="", eps="0.125", M="20", lam="2", exponent="1.875", inner="0.25", outer="1", alpha_prime="16",
        max_annuli="-1", algorithm="sw", n_equil="200", n_meas="20000", thin="1", chains="1", seed="1",
    ),
    "scaling-covariance": dict(
        doc="Scaling covariance m_lam = lam^(15/8) m in law, tested at matched mesh a = 1/32 with a two-sample "
            "KS permutation test; set exponent = 2 for the negative control.",
        kind="scaling", L="1", a="1/32", bc="plus", h="0", t_grid="", h_grid="", eps="0.125", M="20",
        lam="2", exponent="1.875", inner="0.25", outer="1", alpha_prime="16", max_annuli="-1",
        algorithm="sw", n_equil="500", n_meas="70000", thin="7", chains="1", seed="1",
    ),
    "near-critical": dict(
        doc="Near-critical field h = 1 at a = 1: grand coupling of a box of side L2 with a larger plane; "
            "failure probability against the number of ratio-4 annuli between L1 and L2. "
            "n_equil = coupled heat-bath sweeps, n_meas = sweeps after coupling, chains = runs.",
        kind="coupling", L="8,128", a="1", bc="plus", h="1", t_grid="", h_grid="", eps="0.125", M="20",
        lam="2", exponent="1.875", inner="0.25", outer="1", alpha_prime="16", max_annuli="-1",
        algorithm="heatbath", n_equil="50", n_meas="5", thin="1", chains="400", seed="1",
    ),
}

TAGS = tuple(_TEMPLATES)


def template(tag: str, output: str | None = None) -> str:
    if tag not in _TEMPLATES:
        raise KeyError(tag)
    t = _TEMPLATES[tag]
    doc = "\n".join("# " + line for line in _wrap(t["doc"]))
    return f"""{doc}
[experiment]
kind = {t['kind']}
# output directory (created if missing)
output = {output or 'runs/' + tag}

[geometry]
# physical box sides; the lattice has L/a sites per side
L = {t['L']}
a = {t['a']}
# any of plus, minus, free
bc = {t['bc']}

[physics]
# unit-normalised field(s); the site field is h * a^(15/8)
h = {t['h']}
t_grid = {t['t_grid']}
h_grid = {t['h_grid']}
# mesoscopic square side and mass window factor
eps = {t['eps']}
M = {t['M']}
# scaling covariance: side ratio and tested exponent
lam = {t['lam']}
exponent = {t['exponent']}
# annulus sides as fractions of the box side
inner = {t['inner']}
outer = {t['outer']}
# synthetic tail exponent for the Tauberian self-test
alpha_prime = {t['alpha_prime']}
# coupling annuli to explore, -1 = all
max_annuli = {t['max_annuli']}
""" + _COMMON_TAIL.format(**t)


def _wrap(text: str, width: int = 96) -> list[str]:
    out, line = [], ""
    for w in text.split():
        if len(line) + len(w) + 1 > width:
            out.append(line)
            line = w
        else:
            line = f"{line} {w}" if line else w
    if line:
        out.append(line)
    return out
