# Reference values for alpha and beta at 50 significant digits.
from mpmath import mp, mpf, pi, sqrt
mp.dps = 50
hbar = mpf("1.054571817e-34")
ev = mpf("1.602176634e-19")
delta = mpf("180e-6")
dt = mpf("3e-6")
omega = 2 * pi * mpf("4.534e9")
alpha = dt * sqrt(2 * omega * delta * ev / (pi**2 * hbar))
beta = mpf("4e24") * mpf("6975e-18") * delta / mpf("0.57")
print("alpha", mp.nstr(alpha, 20))
print("beta ", mp.nstr(beta, 20))
