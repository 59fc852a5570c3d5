"""advland: a desk-scale laboratory for the loss landscape of adversarial training."""

from .attack import (
    AdvBudget, OracleBoundError, PgdConfig, bruteforce_adv_loss, cifar_style_pgd,
    fgsm, fgsm_batch, mnist_style_pgd, pgd, pgd_batch, robust_error,
)
from .connect import (
    BezierCurve, CurveEval, bezier_point, bernstein_coefficients, eval_curve,
    make_curve, train_curve,
)
from .core import (
    BinaryLogistic, Dataset, DimensionError, LinearMulticlass, Mlp, Model,
    NonFiniteError, ParamVector, batch_loss_grad_input, batch_loss_grad_theta,
    forward_logits, from_segments, init_model, init_params, loss_grad_input,
    loss_grad_theta, make_blobs, make_image_task, mean_loss, per_example_loss,
    predict, softmax,
)
from .probe import (
    EigenReport, LandscapeGrid, SimilarityReport, adversarial_grad_fn,
    adversarial_loss_fn, hessian_matvec, hvp, landscape_grid,
    normalization_constant, perturb_similarity, top_eigenpairs,
)
from .rng import RngStream
from .schedule import (
    EpsScheduler, LrSchedule, PeriodPlan, constant_eps, cosine_eps, eps_at,
    linear_eps, lr_at, single_period,
)
from .theory import (
    CertificateError, LogisticProblem, MarginCertificate, adv_logistic_grad_hessian,
    adv_logistic_loss, certify_margin, eig_monotonicity_check, eps_bar,
    g_lower_bound, multiclass_clean_loss, project_w, t_set_member,
    version_space_member,
)
from .train import (
    DeadNeuronReport, Ensemble, OptimizerState, TelemetryRecord, TrainResult,
    adam, dead_neuron_report, ensemble_from_snapshots, ensemble_predict,
    ensemble_predict_batch, final_robust_error, optimizer_step, sgd,
    telemetry_csv, train_adversarial,
)

__version__ = "0.1.0"
