"""Ground-truth-free evaluation of uncertainty scores for binary classifiers."""
from .core import (LabeledSample, OracleAnnotation, PredictionRecord, ProbVector, ScoreSeries,
                   gap_delta, mis_indicator, varphi_of)
from .errors import (DegenerateData, InfeasibleBudget, InvalidParameter, JoinFailure, MetricUndefined,
                     SchemaError, UqScoreError)
from .metrics import (CorrelationReport, MetricReport, g_auc_direct, g_auc_from_lemma, h_auc_direct,
                      h_auc_from_lemma, kendall_tau, pearson_fisher, uq_auc, uq_c_index)
from .risk import CalibratedGate, RiskCurve, calibrate_gate, dominance_profile, risk_curve

__version__ = "0.1.0"
