"""Cough-recording COVID-19 classification with soft decision forests."""

from .audio import AudioClip, PowerSpectrogram, decode_wav, load_clip, power_spectrogram, resample
from .dataset import FeatureMatrix, SampleRecord, build_combined, load_manifest, materialize
from .ensemble import ExtraTreesClassifier, FeatureSelection, rfecv
from .evaluation import ConfusionMatrix, EvalMetrics, confusion, metrics, roc_auc, select_threshold, stratified_kfold
from .features import N_FEATURES, FeatureVector, extract_feature_vector, mel_scale
from .harness import PipelineOptions, RunReport, StrategyConfig, run_combined, run_cross_dataset, run_strategy
from .neural_trees import DEFAULT_HYPERPARAMS, ForestModel, HyperParams, fit_forest, predict_proba
from .smote import smote_resample
from .tuning import SearchSpace, TrialRecord, expected_improvement, gp_posterior, optimize

__version__ = "0.1.0"
