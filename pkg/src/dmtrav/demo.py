"""Self-contained synthetic end-to-end run at desk scale.

Generates a frozen two-class task (horizontal-stripe images vs
vertical-stripe images, 32x32 grayscale, seeded PCG64 noise), then runs
the whole pipeline: extraction, Gram precompute, a three-lambda
traversal with the weights scaled by the median-heuristic kernel width,
reconstruction of every traversed point, SVM + Platt evaluation of the
decision sweep, and the matched adversarial baseline. Every output is a
deterministic function of the seed, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluate, formats, mmd, reconstruct, traversal
from .errors import InvalidInputError
from .features import ImageTensor, init_weights, reference_spec
from .features import extract as extract_features
from .optim import MinimizeConfig

DEMO_WEIGHT_SEED = 42
DEMO_CLASS_SIZE = 64
DEMO_LAMBDA_SCALES = (1e-2, 1e-3, 1e-4)
DEMO_SVM_C = 1.0
_STRIPE_PERIOD = 8
_NOISE_SIGMA = 0.08

# Iteration caps keep the full run in the low minutes while leaving the
# solves well converged at this scale.
_RECON_SOLVER = MinimizeConfig(max_iters=400)
_ADV_SOLVER = MinimizeConfig(max_iters=250)


def _stripe_image(rng: np.random.Generator, vertical: bool) -> ImageTensor:
    phase = int(rng.integers(0, _STRIPE_PERIOD))
    idx = (np.arange(32) + phase) % _STRIPE_PERIOD
    band = np.where(idx < _STRIPE_PERIOD // 2, 0.75, 0.25)
    base = np.tile(band[None, :], (32, 1)) if vertical else np.tile(band[:, None], (1, 32))
    noisy = base + _NOISE_SIGMA * rng.standard_normal((32, 32))
    return ImageTensor(np.clip(noisy, 0.0, 1.0)[:, :, None])


def make_demo_images(seed: int) -> tuple[list[ImageTensor], list[ImageTensor], ImageTensor]:
    """(sources, targets, test): horizontal-stripe sources, vertical-stripe targets."""
    rng = np.random.default_rng(seed)
    sources = [_stripe_image(rng, vertical=False) for _ in range(DEMO_CLASS_SIZE)]
    targets = [_stripe_image(rng, vertical=True) for _ in range(DEMO_CLASS_SIZE)]
    test = _stripe_image(rng, vertical=False)
    return sources, targets, test


@dataclass
class DemoOutcome:
    out_dir: Path
    sigma: float
    lambdas: tuple[float, ...]
    baseline_decision: float
    baseline_probability: float
    decisions: list[float]  # at the traversed feature points
    probabilities: list[float]
    recon_decisions: list[float]  # at the reconstructed images
    recon_l2: list[float]
    adversarial_c: float
    adversarial_decision: float
    adversarial_l2: float
    traversal_l2_at_match: float
    decision_monotone: bool
    sign_flip_at_smallest: bool
    probability_crosses_half: bool
    adversarial_smaller: bool


def run_demo(seed: int, out_dir, quiet: bool = False) -> DemoOutcome:
    out = Path(out_dir)
    data_dir = out / "dataset"
    data_dir.mkdir(parents=True, exist_ok=True)

    def say(msg: str) -> None:
        if not quiet:
            print(msg)

    sources, targets, test = make_demo_images(seed)
    source_paths = []
    target_paths = []
    for i, img in enumerate(sources):
        p = data_dir / f"source_{i:02d}.ppm"
        formats.save_image(img, p)
        source_paths.append(str(p))
    for i, img in enumerate(targets):
        p = data_dir / f"target_{i:02d}.ppm"
        formats.save_image(img, p)
        target_paths.append(str(p))
    input_path = data_dir / "input.ppm"
    formats.save_image(test, input_path)
    # The stored manifest uses paths relative to its own directory so the
    # output tree is bit-identical wherever it lands.
    rel = formats.Manifest(
        [f"dataset/source_{i:02d}.ppm" for i in range(len(sources))],
        [f"dataset/target_{i:02d}.ppm" for i in range(len(targets))],
        "dataset/input.ppm",
    )
    (out / "manifest.txt").write_text(formats.format_manifest(rel), encoding="utf-8")
    labels = ["+1"] * len(targets) + ["-1"] * len(sources)
    (out / "labels.txt").write_text("\n".join(labels) + "\n", encoding="utf-8")
    say(f"dataset: {len(sources)} sources, {len(targets)} targets at {data_dir}")

    # Work from the quantized files so the pipeline matches what was written.
    spec = reference_spec()
    weights = init_weights(spec, DEMO_WEIGHT_SEED)
    rows = [extract_features(spec, weights, formats.load_image(p)) for p in target_paths]
    rows += [extract_features(spec, weights, formats.load_image(p)) for p in source_paths]
    rows.append(extract_features(spec, weights, formats.load_image(input_path)))
    V = np.stack(rows)
    feature_path = out / "features.dmtv"
    formats.write_feature_file(feature_path, V, len(sources), len(targets))
    formats.append_gram(feature_path)
    ff = formats.read_feature_file(feature_path)
    features = ff.as_feature_matrix()
    say(f"features: K={features.K} D={features.D}")

    sigma = mmd.median_heuristic_sigma(features.G)
    lambdas = tuple(s / sigma for s in DEMO_LAMBDA_SCALES)
    tcfg = traversal.TraversalConfig(lambdas=lambdas, kernel=mmd.KernelConfig(sigma))
    result = traversal.traverse(features, tcfg)
    (out / "traversal_records.txt").write_text(
        formats.format_traversal_records(result.records), encoding="utf-8"
    )
    for i, rec in enumerate(result.records):
        formats.write_vector(out / f"r_{i}.dmtv", rec.r)
        formats.write_vector(out / f"zt_{i}.dmtv", traversal.materialize(features, rec.r))
    say(f"traversal: sigma={sigma:.6g}, lambdas={[f'{l:.3g}' for l in lambdas]}")

    test_img = formats.load_image(input_path)
    recon_l2 = []
    recons = []
    for i, rec in enumerate(result.records):
        z = traversal.materialize(features, rec.r)
        rcfg = reconstruct.ReconstructionConfig(init=test_img, solver=_RECON_SOLVER)
        rres = reconstruct.invert(spec, weights, z, rcfg)
        formats.save_image(rres.image, out / f"recon_{i}.ppm")
        recons.append(rres.image)
        recon_l2.append(float(np.linalg.norm(rres.image.pixels - test_img.pixels)))
        say(
            f"reconstruct lambda={rec.lam:.3g}: feature_loss={rres.final_feature_loss:.4g} "
            f"pixel_l2={recon_l2[-1]:.4g}"
        )

    model = fit_classifier(features, np.array([1.0] * features.n + [-1.0] * features.m))
    report = evaluate.sweep_decisions(model, result, features)
    (out / "sweep_report.txt").write_text(formats.format_sweep_report(report), encoding="utf-8")
    base = report.records[0]
    swept = report.records[1:]
    decisions = [r.decision_value for r in swept]
    probabilities = [r.probability for r in swept]
    recon_decisions = [
        evaluate.predict(model, extract_features(spec, weights, img))[0] for img in recons
    ]
    say(f"eval: baseline decision={base.decision_value:.4g}, swept={[f'{d:.4g}' for d in decisions]}")

    # Match the adversarial image to the decision value of the generated
    # image (the smallest-lambda reconstruction), image against image.
    target_decision = recon_decisions[-1]
    c_adv = evaluate.match_regularizer(
        spec, weights, model, test_img, target_decision, cfg=_ADV_SOLVER
    )
    adv = evaluate.adversarial_perturb(spec, weights, model, test_img, c_adv, cfg=_ADV_SOLVER)
    formats.save_image(adv.perturbed, out / "adversarial.ppm")
    (out / "adversarial_report.txt").write_text(
        formats.format_adversarial_report([(c_adv, adv.decision_value, adv.l2_pixel_distance)]),
        encoding="utf-8",
    )
    say(
        f"adversarial: c={c_adv:.4g} decision={adv.decision_value:.4g} "
        f"l2={adv.l2_pixel_distance:.4g} vs traversal l2={recon_l2[-1]:.4g}"
    )

    toward_flip = np.sign(decisions[-1] - base.decision_value) or 1.0
    steps = np.diff([base.decision_value] + decisions)
    outcome = DemoOutcome(
        out_dir=out,
        sigma=sigma,
        lambdas=lambdas,
        baseline_decision=base.decision_value,
        baseline_probability=base.probability,
        decisions=decisions,
        probabilities=probabilities,
        recon_decisions=recon_decisions,
        recon_l2=recon_l2,
        adversarial_c=c_adv,
        adversarial_decision=adv.decision_value,
        adversarial_l2=adv.l2_pixel_distance,
        traversal_l2_at_match=recon_l2[-1],
        decision_monotone=bool(np.all(toward_flip * steps >= 0)),
        sign_flip_at_smallest=bool(
            np.sign(decisions[-1]) == -np.sign(base.decision_value) and decisions[-1] != 0
        ),
        probability_crosses_half=bool(
            (base.probability - 0.5) * (probabilities[-1] - 0.5) < 0
        ),
        adversarial_smaller=bool(adv.l2_pixel_distance < recon_l2[-1]),
    )
    (out / "summary.txt").write_text(format_summary(seed, outcome), encoding="utf-8")
    say(f"summary written to {out / 'summary.txt'}")
    return outcome


def fit_classifier(features: mmd.FeatureMatrix, labels: np.ndarray) -> evaluate.ClassifierModel:
    """Train the SVM on the deterministic 80% split and Platt-fit on the held-out 20%.

    Every fifth feature row (index % 5 == 0) is held out; the split
    covers all rows except the test image.
    """
    X = features.V[: features.K - 1]
    if labels.size != X.shape[0]:
        raise InvalidInputError("one label per non-test row is required")
    idx = np.arange(X.shape[0])
    held = idx % 5 == 0
    w, b = evaluate.train_svm(X[~held], labels[~held], DEMO_SVM_C)
    held_decisions = X[held] @ w + b
    platt_a, platt_b = evaluate.platt_fit(held_decisions, (labels[held] > 0).astype(int))
    return evaluate.ClassifierModel(
        w=w,
        b=b,
        platt_a=platt_a,
        platt_b=platt_b,
        trained_on="reference extractor taps; positive decision = target block",
    )


def format_summary(seed: int, o: DemoOutcome) -> str:
    lines = [
        f"seed {seed}",
        f"sigma {o.sigma!r}",
        f"baseline_decision {o.baseline_decision!r}",
        f"baseline_probability {o.baseline_probability!r}",
    ]
    for i, lam in enumerate(o.lambdas):
        lines.append(
            f"lambda {lam!r} decision {o.decisions[i]!r} probability {o.probabilities[i]!r} "
            f"recon_decision {o.recon_decisions[i]!r} recon_l2 {o.recon_l2[i]!r}"
        )
    lines += [
        f"adversarial_c {o.adversarial_c!r}",
        f"adversarial_decision {o.adversarial_decision!r}",
        f"adversarial_l2 {o.adversarial_l2!r}",
        f"traversal_l2_at_match {o.traversal_l2_at_match!r}",
        f"decision_monotone {str(o.decision_monotone).lower()}",
        f"sign_flip_at_smallest {str(o.sign_flip_at_smallest).lower()}",
        f"probability_crosses_half {str(o.probability_crosses_half).lower()}",
        f"adversarial_smaller {str(o.adversarial_smaller).lower()}",
    ]
    return "\n".join(lines) + "\n"
