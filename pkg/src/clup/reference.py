"""Published reference values used by ``repro`` and the acceptance tests.

Ids follow the order in which the tables appear in the source document
(``table1`` ... ``table15``).  Statistic keys: ``p_err``, ``neg_s_hat``
(the attained objective), ``d2``, ``d1``.  Iteration rows are keyed by ``k``
and dimension sweeps by ``n``.
"""

from __future__ import annotations

STATS = ("p_err", "neg_s_hat", "d2", "d1")

# default replication counts of the dimension sweeps
SWEEP_REPS = {100: 165, 200: 954, 400: 600, 800: 465, 1600: 170}

CLUP_R15_N800 = {
    1: (0.079723, 0.17683, 0.68174, 0.71573),
    2: (0.036420, 0.89707, 0.88133, 0.88448),
    3: (0.014820, 0.95550, 0.94091, 0.94706),
    4: (0.004763, 0.97799, 0.96899, 0.97579),
    5: (0.001240, 0.98763, 0.97984, 0.98639),
    6: (0.000317, 0.99090, 0.98309, 0.98946),
    7: (0.000136, 0.99178, 0.98395, 0.99026),
    8: (0.000083, 0.99202, 0.98419, 0.99048),
    9: (0.000063, 0.99208, 0.98425, 0.99054),
    10: (0.000060, 0.99210, 0.98427, 0.99055),
}
CLUP_R15_LIMIT = (0.000053, 0.99211, 0.98428, 0.99056)

# (nu, gamma, c1z, s1, xi, p_err, d2, d1) per SNR in dB
THEORY_FIRST = {
    10: (0.5075, 0.6816, 0.3306, -0.1844, 0.2252, 0.1134, 0.6749, 0.6722),
    13: (0.4953, 0.9420, 0.1753, -0.1314, 0.1594, 0.0456, 0.7009, 0.7628),
}
THEORY_FIRST_FIELDS = ("nu_hat", "gamma_hat", "c1z_hat", "s1_hat", "xi", "p_err", "d2", "d1")

# simulated first iteration at n=400: (s1 magnitude, xi, p_err, d2, d1)
SIM_FIRST_N400 = {
    10: (0.1845, 0.2252, 0.1133, 0.6769, 0.6719),
    13: (0.1316, 0.1594, 0.0483, 0.7005, 0.7596),
}

# (p_err, |s1|, d2, d1) after the first iteration, r_sc = 1.3
SWEEP_FIRST = {
    100: (0.0485, 0.1230, 0.7097, 0.7640),
    200: (0.0495, 0.1314, 0.7046, 0.7601),
    400: (0.0483, 0.1316, 0.7005, 0.7596),
    800: (0.0447, 0.1294, 0.7046, 0.7658),
    1600: (0.0454, 0.1308, 0.7028, 0.7642),
}

# (nu, nu2, gamma, p1, s_hat, xi, p_err, d2, d1)
THEORY_SECOND = (2.6924, -0.6428, 1.8911, 0.70, -0.9117, 0.1594, 0.00651, 0.9064, 0.9340)
THEORY_SECOND_FIELDS = ("nu2_vec", "nu2_lin", "gamma2", "p1", "s_hat2", "xi", "p_err2", "d2_2", "d1_2")
# (s2, s3, c2z, q1), identical by both routes
THEORY_SECOND_DERIVED = (-0.000458, 0.0660, 0.0384, 0.8253)

# simulated second iteration at n=1600: (neg_s_hat, xi, p_err, d2, d1)
SIM_SECOND_N1600 = (0.9123, 0.1594, 0.0072, 0.9061, 0.9332)

SWEEP_SECOND = {
    100: (0.0188, 0.9098, 0.8886, 0.9081),
    200: (0.0158, 0.9096, 0.8933, 0.9155),
    400: (0.0111, 0.9097, 0.8980, 0.9239),
    800: (0.0079, 0.9126, 0.9048, 0.9317),
    1600: (0.0072, 0.9123, 0.9061, 0.9332),
}

RANDOM_DUAL_D1 = (0.7628, 0.9340, 0.9640, 0.9663, 0.9667)
RANDOM_DUAL_D2 = (0.7009, 0.9064, 0.9420, 0.9445, 0.9450)
RANDOM_DUAL_ROWS = {
    1: (0.04571, 0.1314, 0.7009, 0.7628),
    2: (0.00651, 0.9117, 0.9064, 0.9340),
    3: (0.00051, 0.9658, 0.9410, 0.9640),
    4: (0.00024, 0.9715, 0.9445, 0.9663),
    5: (0.00020, 0.9720, 0.9450, 0.9667),
}
R13_LIMIT = (0.00016, 0.9721, 0.9451, 0.9668)

CLUP_R13_N400 = {
    1: (0.04828, 0.13163, 0.7005, 0.7596),
    2: (0.01110, 0.90970, 0.8980, 0.9239),
    3: (0.00235, 0.95915, 0.9328, 0.9560),
    4: (0.00067, 0.96843, 0.9406, 0.9633),
    5: (0.00029, 0.97041, 0.9423, 0.9648),
    6: (0.00019, 0.97084, 0.9427, 0.9652),
}

CLUP_R13_N800 = {
    1: (0.04470, 0.1294, 0.7046, 0.7658),
    2: (0.00790, 0.9126, 0.9048, 0.9317),
    3: (0.00121, 0.9618, 0.9374, 0.9603),
    4: (0.00033, 0.9705, 0.9438, 0.9658),
    5: (0.00020, 0.9719, 0.9449, 0.9668),
}

# overlap matrices: the estimated pair and the pair measured on simulations
P5_ESTIMATED = (
    (1.0, 0.70, 0.63, 0.625, 0.60),
    (0.70, 1.0, 0.95, 0.92, 0.88),
    (0.63, 0.95, 1.0, 0.99, 0.98),
    (0.625, 0.92, 0.99, 1.0, 0.996),
    (0.60, 0.88, 0.98, 0.996, 1.0),
)
Q5_ESTIMATED = (
    (1.0, 0.825, 0.69, 0.65, 0.63),
    (0.825, 1.0, 0.955, 0.92, 0.9),
    (0.69, 0.955, 1.0, 0.995, 0.99),
    (0.65, 0.92, 0.995, 1.0, 0.999),
    (0.63, 0.9, 0.99, 0.999, 1.0),
)
P5_SIMULATED = (
    (1.0000, 0.7101, 0.6351, 0.6146, 0.6088),
    (0.7101, 1.0000, 0.9387, 0.8888, 0.8682),
    (0.6351, 0.9387, 1.0000, 0.9849, 0.9711),
    (0.6146, 0.8888, 0.9849, 1.0000, 0.9965),
    (0.6088, 0.8682, 0.9711, 0.9965, 1.0000),
)
Q5_SIMULATED = (
    (1.0000, 0.8352, 0.7072, 0.6501, 0.6281),
    (0.8352, 1.0000, 0.9447, 0.8898, 0.8636),
    (0.7072, 0.9447, 1.0000, 0.9844, 0.9685),
    (0.6501, 0.8898, 0.9844, 1.0000, 0.9962),
    (0.6281, 0.8636, 0.9685, 0.9962, 1.0000),
)

F_SPH2 = 0.9834
F_SPH3 = 0.9967
