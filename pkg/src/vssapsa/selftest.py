"""Quick oracle and property checks, runnable without pytest."""
import numpy as np

from .adaptive import RegressorWindow, apa_update, apsa_update, delta_norm, sgn
from .harness import ExperimentConfig, run_experiment
from .signals import gen_ar1, gen_bg, synthesize_scenario
from .stepsize import (MomentState, ProposedVSS, ShaoOracleVSS, ShinVSS,
                       quadratic_step, update_moments)


def _random_window(rng, L, P):
    w = RegressorWindow(L, P)
    for u in rng.standard_normal(L + P):
        w.push(u)
    return w


def check_quadratic(rng):
    worst = 0.0
    for _ in range(10000):
        A = rng.uniform(0.1, 10.0)
        B = rng.uniform(0.1, 10.0)
        C = rng.uniform(0.0, B * B / A)
        delta = rng.uniform(0.1, 10.0)
        m = quadratic_step(A, B, C, delta, mu_max=np.inf)
        r = A * m * m / delta ** 2 - 2 * B * m / delta + C
        worst = max(worst, abs(r) / max(1.0, B * B / A))
    return worst < 1e-10, f"max scaled residual {worst:.2e}"


def check_ema(rng):
    worst = 0.0
    for _ in range(20):
        L, P, a = 4, 3, rng.uniform(0.5, 0.999)
        m = MomentState.zeros(L, P, a)
        xs = rng.standard_normal((100, P, L))
        es = rng.standard_normal((100, P))
        for x, e in zip(xs, es):
            update_moments(m, x, e)
        w = (1 - a) * a ** np.arange(99, -1, -1)
        xx = np.einsum("npl,npl->np", xs, xs)
        ref = w @ (xx * np.abs(es))
        worst = max(worst, np.max(np.abs(m.sigma_x_abs_e - ref)))
        ref = np.einsum("n,npl->pl", w, xs * np.sign(es)[..., None])
        worst = max(worst, np.max(np.abs(m.r_xsgn_e - ref)))
    return worst < 1e-12, f"max deviation {worst:.2e}"


def check_a_posteriori(rng):
    worst = 0.0
    for _ in range(500):
        L = int(rng.integers(2, 9))
        P = int(rng.integers(1, min(L, 4) + 1))
        w = _random_window(rng, L, P)
        h = rng.standard_normal(L)
        e = rng.standard_normal(P)
        mu = rng.uniform(0.0, 0.1, P)
        s = sgn(e)
        delta = delta_norm(w, s, 0.0)
        h2 = apsa_update(h, w, e, mu, eps=0.0)
        e_post = e - w.Xt @ (h2 - h)
        ref = e - w.Xt @ w.columns @ (mu * s) / delta
        worst = max(worst, np.max(np.abs(e_post - ref)))
    return worst < 1e-10, f"max deviation {worst:.2e}"


def check_apa_projection(rng):
    worst = 0.0
    for _ in range(200):
        L = int(rng.integers(4, 9))
        P = int(rng.integers(1, 4))
        w = _random_window(rng, L, P)
        h = rng.standard_normal(L)
        d = rng.standard_normal(P)
        e = d - w.Xt @ h
        h2 = apa_update(h, w, e, 1.0, 0.0)
        worst = max(worst, np.max(np.abs(d - w.Xt @ h2)))
    return worst < 1e-8, f"max a posteriori error {worst:.2e}"


def check_sgn_fixpoint(rng):
    w = _random_window(rng, 8, 3)
    h = rng.standard_normal(8)
    h2 = apsa_update(h, w, np.zeros(3), np.full(3, 0.05))
    return np.array_equal(h, h2), "zero error leaves coefficients unchanged"


def check_controllers(rng):
    L, P, mu_max = 8, 3, 0.05
    shin = ShinVSS(L, P, 0.9, mu_max, mu_max=mu_max)
    ctrls = [shin, ShaoOracleVSS(L, P, 0.9, mu_max=mu_max),
             ProposedVSS(L, P, 0.9, mu_max=mu_max)]
    w = RegressorWindow(L, P)
    prev = np.inf
    ok = True
    for k in range(2000):
        w.push(rng.standard_normal())
        e = rng.standard_normal(P) * rng.choice([0.0, 1e-3, 1.0, 1e3])
        delta = delta_norm(w, sgn(e), 1e-9)
        for c in ctrls:
            c.observe_near_end(rng.standard_normal())
            mu = c.step(w, e, delta)
            ok &= bool(np.all((mu >= 0) & (mu <= mu_max)))
        ok &= bool(shin.state.mu_prev <= prev)
        prev = shin.state.mu_prev
    return ok, "steps in [0, mu_max], shrinking rule never increases"


def check_generators(rng):
    u = gen_ar1(1_000_000, 0.8, 21)
    u = u - u.mean()
    rho = float(u[1:] @ u[:-1] / (u @ u))
    z = gen_bg(1_000_000, 0.1, 4.0, 3)
    bg = float(np.mean(z * z))
    sc = synthesize_scenario(ExperimentConfig(n_samples=100_000, sir_db=0.0))
    echo = np.mean(sc.y ** 2)
    snr = 10 * np.log10(echo / np.mean(sc.wgn ** 2))
    sir = 10 * np.log10(echo / np.mean(sc.bg ** 2))
    ok = abs(rho - 0.8) <= 0.02 and abs(bg - 0.4) <= 0.02 \
        and abs(snr - 30) <= 0.5 and abs(sir) <= 0.5
    return ok, f"lag-1 {rho:.4f}, BG power {bg:.4f}, SNR {snr:.2f} dB, SIR {sir:.2f} dB"


def check_determinism(rng):
    cfg = ExperimentConfig(L=16, P=3, n_samples=1500, sir_db=0.0)
    a, b = run_experiment(cfg), run_experiment(cfg)
    ok = a.misalignment_db.tobytes() == b.misalignment_db.tobytes() \
        and a.step_size.tobytes() == b.step_size.tobytes()
    return ok, "identical configs give bitwise-equal traces"


CHECKS = (
    ("quadratic step residual", check_quadratic),
    ("moment averages vs closed form", check_ema),
    ("a posteriori error identity", check_a_posteriori),
    ("APA exact projection", check_apa_projection),
    ("sign of zero is a fixpoint", check_sgn_fixpoint),
    ("controller bounds and monotone shrink", check_controllers),
    ("generator statistics", check_generators),
    ("determinism", check_determinism),
)


def run_selftest(seed=0, out=print):
    """Run every check; returns True when all pass."""
    rng = np.random.default_rng(seed)
    passed = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng)
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        passed += ok
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    out(f"{passed}/{len(CHECKS)} checks passed")
    return passed == len(CHECKS)
