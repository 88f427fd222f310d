"""Exact Zernike product weights and a rigorous product enclosure.

Prints the expansion of V^1_3 * V^2_4 in V^3_n from the exact table, then
multiplies two enclosures with error slots and shows the Banach-algebra bound.
"""

from fractions import Fraction

from zernprove import regge
from zernprove.zernike import EVEN, Zernike, multiply, norm_upper, product_tensor

RHO = Fraction(65, 64)

print("V^1_3 * V^2_4 = sum_n w_n V^3_n with")
for n3 in range(1, 8, 2):
    print(f"  w_{n3} = {regge.cg_squared(3, 1, 4, 2, n3)}")

T = product_tensor(12)
u = Zernike.from_modes(RHO, EVEN, 12, {(0, 0): 1, (1, 3): 0.5, (2, 2): -0.25})
v = Zernike.from_modes(RHO, EVEN, 12, {(0, 2): 2, (3, 5): 1}).widen_band(4, 1e-3)
p = multiply(u, v, T)
print(f"||u|| <= {norm_upper(u):.6g}, ||v|| <= {norm_upper(v):.6g}, ||uv|| <= {norm_upper(p):.6g}")
print(f"product error slots total {p.error_total():.3g}")
print("coefficient of V^3_5 in uv:", p.coefficient(3, 5))
