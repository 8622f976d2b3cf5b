"""Taxonomies."""


class Activation:
    RELU = "relu"
    SCALED_ERF = "scaled_erf"


class IntegralName:
    I1 = "I1"
    I2 = "I2"
    I31 = "I31"
    I32 = "I32"
    I3 = "I3"
    I22 = "I22"
    I42 = "I42"
    I43 = "I43"
    I4 = "I4"


INTEGRAL_ARITY = {
    IntegralName.I1: 1,
    IntegralName.I2: 2,
    IntegralName.I31: 1,
    IntegralName.I32: 2,
    IntegralName.I3: 3,
    IntegralName.I22: 2,
    IntegralName.I42: 2,
    IntegralName.I43: 3,
    IntegralName.I4: 4,
}


class CovarianceKind:
    ISOTROPIC = "isotropic"
    DENSE = "dense"
    SPECTRAL = "spectral"


class MixtureBuilder:
    XOR = "xor"
    THREE_CLUSTER = "three_cluster"
    FILE = "file"


class Regime:
    LOW = "low"
    HIGH = "high"
    MIXED = "mixed"


class ExperimentKind:
    ODE_RUN = "ode_run"
    SGD_2LNN = "sgd_2lnn"
    SGD_RF = "sgd_rf"
    FIXED_POINT_SWEEP = "fixed_point_sweep"
    RF_ASYMPTOTICS_SWEEP = "rf_asymptotics_sweep"
    SNR_COMPARISON = "snr_comparison"
    OVERPARAM_SWEEP = "overparam_sweep"
    MASTER_CURVE = "master_curve"
    REGIME_COMPARISON = "regime_comparison"


class Recipe:
    FIG1 = "fig1"
    FIG2 = "fig2"
    FIG3 = "fig3"
    FIG4 = "fig4"
    FIG5 = "fig5"
    FIG7 = "fig7"
    OVERPARAM = "overparam"
    ODEVSIM = "odevsim"


class VRule:
    MEANS = "means"
    REGRESSION = "regression"


class DecayScaling:
    ODE = "ode"
    LITERAL = "literal"


class MomentKind:
    LOW_SNR = "low_snr"
    RELU = "relu"


class KernelReference:
    NOISE = "noise"
    ORTHOGONAL = "orthogonal"


class CellStatus:
    OK = "ok"
    FAILED = "failed"
