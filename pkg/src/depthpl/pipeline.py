"""Training schedule and evaluation.

Stage 1 trains the preliminary depth model on synthetic pairs (plus their
real-stylized copies) with target-image smoothness; the completion model is
pretrained on clouds projected from synthetic ground truth; pseudo-labels
are then generated offline from the frozen stage-1 model, and stage 2
fine-tunes on them. The stereo mode appends a geometric-consistency phase
to stage 1 and adds the same term to stage 2.

All optimization uses Adam with a linear learning-rate decay after
``decay_start`` epochs. Every random draw derives from the run seed, so a
(config, seed) pair reproduces bit-identical checkpoints and labels.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import tensor as T
from .config import derive_seed
from .formats import (load_manifest, read_pfm, read_pgm_mask, read_ppm,
                      write_manifest, write_pfm, write_pgm_mask, write_ppm)
from .geometry import DepthMap, PixelMask, project_2d_to_3d, project_3d_to_2d, uniform_subsample
from .networks import CompletionNet, DepthNet, assign_parameters, load_checkpoint, save_checkpoint
from .pseudolabel import (PseudoLabelSet, build_label_set, completion_label,
                          consistency_label, empty_label_set, fuse_for_training)
from .scenegen import SampleRecord, make_dataset, stylize


def worker_count():
    """Thread cap from DEPTHPL_THREADS (0 or unset = auto)."""
    raw = os.environ.get("DEPTHPL_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else min(4, os.cpu_count() or 1)


def lr_for_epoch(lr0, epoch, decay_start, total):
    """Linear decay after decay_start: lr * (1 - (e - ds) / (total - ds))."""
    if epoch < decay_start or total <= decay_start:
        return lr0
    return lr0 * (1.0 - (epoch - decay_start) / (total - decay_start))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, params, lr):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data -= lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class Dataset:
    sources: list            # (image (H,W,3), depth (H,W))
    targets: list            # left-view images
    target_rights: list      # right-view images ([] in single mode)
    evals: list              # (image, gt depth)


def dataset_from_records(records):
    src, tgt, tgt_r, evals = [], [], [], []
    for rec in records:
        if rec.role == "source":
            src.append((rec.image, rec.depth))
        elif rec.role == "target-train" and rec.side in ("left", "mono"):
            tgt.append(rec.image)
        elif rec.role == "target-train":
            tgt_r.append(rec.image)
        else:
            evals.append((rec.image, rec.depth))
    return Dataset(src, tgt, tgt_r, evals)


def _chw(img):
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def write_dataset(out_dir, records):
    """Write PPM/PFM files plus the manifest (the manifest goes last, as the
    commit marker)."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    counts = {"source": 0, "eval": 0, "pair": -1}
    for rec in records:
        if rec.role == "source":
            name = f"source_{counts['source']:03d}"
            counts["source"] += 1
        elif rec.role == "target-eval":
            name = f"eval_{counts['eval']:03d}"
            counts["eval"] += 1
        else:
            if rec.side in ("left", "mono"):
                counts["pair"] += 1
            name = f"target_{counts['pair']:03d}_{rec.side}"
        img_path = f"{name}.ppm"
        write_ppm(os.path.join(out_dir, img_path), rec.image)
        depth_path = None
        if rec.depth is not None:
            depth_path = f"{name}_depth.pfm"
            write_pfm(os.path.join(out_dir, depth_path), rec.depth)
        rows.append({"role": rec.role, "side": rec.side, "image": img_path,
                     "depth": depth_path, "scene_seed": rec.scene_seed})
    write_manifest(os.path.join(out_dir, "manifest.json"), rows)


def load_dataset(data_dir):
    rows = load_manifest(os.path.join(data_dir, "manifest.json"))
    records = []
    for rec in rows:
        img = read_ppm(os.path.join(data_dir, rec["image"]))
        depth = None
        if rec.get("depth"):
            depth = read_pfm(os.path.join(data_dir, rec["depth"]))
        records.append(SampleRecord(rec["role"], rec["side"], img, depth, rec["scene_seed"]))
    return dataset_from_records(records)


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _cycled(order, start, size):
    idx = np.arange(start, start + size)
    return np.take(order, idx, mode="wrap")


def _mean_of(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return T.mul(acc, 1.0 / len(terms))


# ---------------------------------------------------------------------------
# stage 1


def _stylized_copies(data, cfg):
    """Per source image, n real-stylized copies with seeded style picks."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "stage1", "styles")))
    out = []
    for img, _ in data.sources:
        picks = rng.integers(0, len(data.targets), size=cfg.stylized_copies_per_source)
        out.append([stylize(img, data.targets[p]) for p in picks])
    return out


def train_stage1(data, cfg, epochs=None, stereo_epochs=None, progress=None,
                 synthetic_only=False):
    """Train the preliminary depth model; returns (net, loss curve).

    synthetic_only drops the stylized-copy and target-smoothness terms,
    training purely on synthetic supervision (the no-adaptation baseline).
    """
    if not data.sources or (not synthetic_only and not data.targets):
        raise ValueError("stage 1 needs source pairs and target images")
    stereo = cfg.mode == "stereo"
    if stereo and not data.target_rights:
        raise ValueError("stereo mode needs right-view target images")
    epochs = cfg.epochs_stage1 if epochs is None else epochs
    stereo_epochs = (cfg.epochs_stereo_extra if stereo_epochs is None else stereo_epochs) if stereo else 0
    if synthetic_only:
        stereo_epochs = 0
    net = DepthNet(d_min=cfg.d_min, d_max=cfg.d_max,
                   seed=derive_seed(cfg.seed, "stage1", "init"))
    w = cfg.weights()
    copies = None if synthetic_only else _stylized_copies(data, cfg)
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "stage1", "order")))
    opt = Adam(net.params)
    curve = []
    n_src, n_tgt = len(data.sources), len(data.targets)

    for epoch in range(epochs):
        lr = lr_for_epoch(cfg.learning_rate, epoch, cfg.decay_start, epochs)
        order = rng.permutation(n_src)
        torder = rng.permutation(n_tgt)
        tpos = 0
        for batch in _batches(order, cfg.batch_size):
            tape = T.Tape()
            net.watch(tape)
            task_s, task_sr, sm = [], [], []
            for i in batch:
                img, gt = data.sources[i]
                task_s.append(L.task_loss(net.forward(_chw(img)), gt))
                if not synthetic_only:
                    copy = copies[i][epoch % len(copies[i])]
                    task_sr.append(L.task_loss(net.forward(_chw(copy)), gt))
            if synthetic_only:
                total = T.mul(_mean_of(task_s), w.lambda_task)
            else:
                tbatch = _cycled(torder, tpos, len(batch))
                tpos += len(batch)
                for j in tbatch:
                    timg = _chw(data.targets[j])
                    sm.append(L.smoothness_loss(net.forward(timg), timg))
                total = L.stage1_total(_mean_of(task_s), _mean_of(task_sr), _mean_of(sm), w)
            T.backward(tape, total)
            opt.step(net.params, lr)
            curve.append(total.item())
        if progress:
            progress(f"stage1 epoch {epoch + 1}/{epochs} loss {curve[-1]:.4f}")

    for epoch in range(stereo_epochs):
        lr = lr_for_epoch(cfg.learning_rate, epoch, cfg.decay_start, stereo_epochs)
        order = rng.permutation(n_src)
        torder = rng.permutation(n_tgt)
        tpos = 0
        for batch in _batches(order, cfg.batch_size):
            tape = T.Tape()
            net.watch(tape)
            task_s, sm, tgc = [], [], []
            for i in batch:
                img, gt = data.sources[i]
                task_s.append(L.task_loss(net.forward(_chw(img)), gt))
            tbatch = _cycled(torder, tpos, len(batch))
            tpos += len(batch)
            for j in tbatch:
                left = _chw(data.targets[j])
                right = _chw(data.target_rights[j])
                pred_l = net.forward(left)
                pred_r = net.forward(right)
                sm.append(L.smoothness_loss(pred_l, left))
                tgc.append(L.geometric_consistency_loss(left, right, pred_l, pred_r,
                                                        cfg.baseline, cfg.f, w))
            total = L.stage1_stereo_total(_mean_of(task_s), _mean_of(sm), _mean_of(tgc), w)
            T.backward(tape, total)
            opt.step(net.params, lr)
            curve.append(total.item())
        if progress:
            progress(f"stage1+tgc epoch {epoch + 1}/{stereo_epochs} loss {curve[-1]:.4f}")
    return net, curve


# ---------------------------------------------------------------------------
# completion pretraining


def _full_cloud(depth, cam):
    return project_2d_to_3d(DepthMap(depth), PixelMask.full(*depth.shape), cam)


def mean_completion_cd(net, clouds, cfg, seed_label="cd-eval"):
    """Mean Chamfer distance of the dense completion against the full cloud."""
    total = 0.0
    for i, cloud in enumerate(clouds):
        sparse = uniform_subsample(cloud, cfg.sample_ratio,
                                   derive_seed(cfg.seed, seed_label, i))
        dense = net.forward(sparse.points)
        total += L.chamfer_distance(cloud.points, dense).item()
    return total / len(clouds)


def train_completion(data, cfg, epochs=None, progress=None):
    """Pretrain the completion model on source ground-truth clouds.

    Returns (net, curve dict with initial/final mean CD and per-step CDs).
    """
    if not data.sources:
        raise ValueError("completion pretraining needs source depths")
    epochs = cfg.epochs_completion if epochs is None else epochs
    cam = cfg.camera()
    net = CompletionNet(k=cfg.completion_k(), feature_dim=cfg.feature_dim,
                        seed=derive_seed(cfg.seed, "completion", "init"))
    clouds = [_full_cloud(gt, cam) for _, gt in data.sources]
    initial_cd = mean_completion_cd(net, clouds, cfg)
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "completion", "order")))
    opt = Adam(net.params)
    steps = []
    for epoch in range(epochs):
        lr = lr_for_epoch(cfg.completion_lr(), epoch, cfg.decay_start, epochs)
        for batch in _batches(rng.permutation(len(clouds)), cfg.batch_size):
            tape = T.Tape()
            net.watch(tape)
            terms = []
            for i in batch:
                sparse = uniform_subsample(clouds[i], cfg.sample_ratio,
                                           derive_seed(cfg.seed, "completion", epoch, i))
                dense = net.forward(sparse.points)
                terms.append(L.chamfer_distance(clouds[i].points, dense))
            total = _mean_of(terms)
            T.backward(tape, total)
            opt.step(net.params, lr)
            steps.append(total.item())
        if progress:
            progress(f"completion epoch {epoch + 1}/{epochs} cd {steps[-1]:.5f}")
    final_cd = mean_completion_cd(net, clouds, cfg)
    return net, {"initial_cd": initial_cd, "final_cd": final_cd, "steps": steps}


def completion_delta1(net, eval_pairs, cfg):
    """delta < 1.25 accuracy of re-projected completed depth vs ground truth.

    Mirrors the completion-model verification protocol: project held-out
    ground truth to 3D, subsample, complete, re-project, and compare on the
    valid-projection pixels.
    """
    cam = cfg.camera()
    good = total = 0
    for i, (_, gt) in enumerate(eval_pairs):
        cloud = _full_cloud(gt, cam)
        sparse = uniform_subsample(cloud, cfg.sample_ratio,
                                   derive_seed(cfg.seed, "completion-eval", i))
        dense = net.complete(sparse)
        depth, mask, _ = project_3d_to_2d(dense, cam)
        sel = mask.bits > 0
        if not sel.any():
            continue
        ratio = np.maximum(depth.depth[sel] / gt[sel], gt[sel] / depth.depth[sel])
        good += int((ratio < 1.25).sum())
        total += int(sel.sum())
    return good / total if total else 0.0


# ---------------------------------------------------------------------------
# pseudo-label generation (offline, from the frozen stage-1 model)


def generate_pseudolabels(depth_net, completion_net, data, cfg):
    """One PseudoLabelSet per target image, deterministic per seed."""
    cam = cfg.camera()
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "labels", "styles")))
    style_picks = rng.integers(0, len(data.sources), size=len(data.targets))

    def one(i):
        timg = data.targets[i]
        stylized = stylize(timg, data.sources[style_picks[i]][0])
        pred_r = np.clip(depth_net.predict(_chw(timg)), cfg.d_min, cfg.d_max)
        pred_rs = np.clip(depth_net.predict(_chw(stylized)), cfg.d_min, cfg.d_max)
        m_consist, y_cons = consistency_label(pred_r, pred_rs, cfg.tau)
        if m_consist.popcount() == 0:
            return empty_label_set(*pred_r.shape)
        y_comp, m_valid = completion_label(y_cons, m_consist, completion_net, cam,
                                           cfg.sample_ratio,
                                           derive_seed(cfg.seed, "labels", "sample", i),
                                           d_max=cfg.d_max)
        return build_label_set(y_cons, m_consist, y_comp, m_valid)

    n = len(data.targets)
    threads = worker_count()
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(n)))
    return [one(i) for i in range(n)]


def save_labels(out_dir, label_sets):
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, ls in enumerate(label_sets):
        paths = {"cons": f"label_{i:03d}_cons.pfm", "comp": f"label_{i:03d}_comp.pfm",
                 "consist": f"label_{i:03d}_consist.pgm", "valid": f"label_{i:03d}_valid.pgm"}
        write_pfm(os.path.join(out_dir, paths["cons"]), ls.y_cons)
        write_pfm(os.path.join(out_dir, paths["comp"]), ls.y_comp)
        write_pgm_mask(os.path.join(out_dir, paths["consist"]), ls.m_consist)
        write_pgm_mask(os.path.join(out_dir, paths["valid"]), ls.m_valid)
        rows.append({"index": i, "files": paths,
                     "stats": {"frac_2d_only": ls.stats.frac_2d_only,
                               "frac_refined": ls.stats.frac_refined,
                               "frac_extended": ls.stats.frac_extended}})
    write_manifest_like(os.path.join(out_dir, "labels.json"), {"labels": rows})


def write_manifest_like(path, doc):
    import json
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_labels(label_dir, count):
    sets = []
    for i in range(count):
        y_cons = DepthMap(read_pfm(os.path.join(label_dir, f"label_{i:03d}_cons.pfm")))
        y_comp = DepthMap(read_pfm(os.path.join(label_dir, f"label_{i:03d}_comp.pfm")))
        m_consist = read_pgm_mask(os.path.join(label_dir, f"label_{i:03d}_consist.pgm"))
        m_valid = read_pgm_mask(os.path.join(label_dir, f"label_{i:03d}_valid.pgm"))
        sets.append(build_label_set(y_cons, m_consist, y_comp, m_valid))
    return sets


# ---------------------------------------------------------------------------
# stage 2


def train_stage2(init_params, label_sets, data, cfg, epochs=None, progress=None):
    """Self-training from the stage-1 initialization; returns (net, curve).

    cfg.pseudo_mode selects the supervision: "full" uses both label families
    with completion precedence, "cons" uses consistency labels alone over
    the whole consistency mask (the 2D-only ablation).
    """
    if len(label_sets) != len(data.targets):
        raise ValueError("one label set per target image is required")
    stereo = cfg.mode == "stereo"
    if stereo and not data.target_rights:
        raise ValueError("stereo mode needs right-view target images")
    epochs = cfg.epochs_stage2 if epochs is None else epochs
    net = DepthNet(d_min=cfg.d_min, d_max=cfg.d_max, seed=0)
    assign_parameters(net, {k: np.array(v.data if isinstance(v, T.Tensor) else v)
                            for k, v in init_params.items()})
    w = cfg.weights()
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "stage2", "order")))
    opt = Adam(net.params)
    curve = []
    n_src, n_tgt = len(data.sources), len(data.targets)
    empty = PixelMask.empty(cfg.height, cfg.width)

    for epoch in range(epochs):
        lr = lr_for_epoch(cfg.stage2_lr(), epoch, cfg.decay_start, epochs)
        torder = rng.permutation(n_tgt)
        sorder = rng.permutation(n_src)
        spos = 0
        for tbatch in _batches(torder, cfg.batch_size):
            tape = T.Tape()
            net.watch(tape)
            l_cons, l_comp, sm, tgc = [], [], [], []
            for j in tbatch:
                left = _chw(data.targets[j])
                pred = net.forward(left)
                ls = label_sets[j]
                if cfg.pseudo_mode == "cons":
                    l_cons.append(L.pseudo_cons_loss(pred, ls.y_cons, ls.m_consist, empty))
                    l_comp.append(T.Tensor(0.0))
                else:
                    mask_cons, mask_comp = fuse_for_training(ls)
                    l_cons.append(L.pseudo_cons_loss(pred, ls.y_cons, ls.m_consist, ls.m_valid))
                    l_comp.append(L.pseudo_comp_loss(pred, ls.y_comp, mask_comp))
                sm.append(L.smoothness_loss(pred, left))
                if stereo:
                    right = _chw(data.target_rights[j])
                    pred_r = net.forward(right)
                    tgc.append(L.geometric_consistency_loss(left, right, pred, pred_r,
                                                            cfg.baseline, cfg.f, w))
            sbatch = _cycled(sorder, spos, len(tbatch))
            spos += len(tbatch)
            task_s = [L.task_loss(net.forward(_chw(data.sources[i][0])), data.sources[i][1])
                      for i in sbatch]
            if stereo:
                total = L.stage2_stereo_total(_mean_of(l_cons), _mean_of(l_comp),
                                              _mean_of(task_s), _mean_of(sm), _mean_of(tgc), w)
            else:
                total = L.stage2_total(_mean_of(l_cons), _mean_of(l_comp),
                                       _mean_of(task_s), _mean_of(sm), w)
            T.backward(tape, total)
            opt.step(net.params, lr)
            curve.append(total.item())
        if progress:
            progress(f"stage2 epoch {epoch + 1}/{epochs} loss {curve[-1]:.4f}")
    return net, curve


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    cap: float
    count: int

    def to_csv(self):
        rows = ["metric,value"]
        for name in ("abs_rel", "sq_rel", "rmse", "rmse_log",
                     "delta1", "delta2", "delta3", "cap", "count"):
            rows.append(f"{name},{getattr(self, name)!r}")
        return "\n".join(rows) + "\n"


def metrics_from_arrays(pred, gt, cap):
    """Standard depth metrics over already-masked, clamped value arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("evaluate: empty valid pixel set")
    thresh = np.maximum(gt / pred, pred / gt)
    return EvalReport(
        abs_rel=float(np.mean(np.abs(pred - gt) / gt)),
        sq_rel=float(np.mean((pred - gt) ** 2 / gt)),
        rmse=float(np.sqrt(np.mean((pred - gt) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))),
        delta1=float(np.mean(thresh < 1.25)),
        delta2=float(np.mean(thresh < 1.25 ** 2)),
        delta3=float(np.mean(thresh < 1.25 ** 3)),
        cap=float(cap),
        count=int(pred.size),
    )


def evaluate(net, eval_pairs, cap, d_min):
    """Pool pixels with 0 < gt <= cap over the eval set; predictions are
    clamped to [d_min, cap]."""
    preds, gts = [], []
    for img, gt in eval_pairs:
        pred = net.predict(_chw(img))
        sel = (gt > 0) & (gt <= cap)
        preds.append(np.clip(pred[sel], d_min, cap))
        gts.append(gt[sel])
    return metrics_from_arrays(np.concatenate(preds), np.concatenate(gts), cap)


# ---------------------------------------------------------------------------
# workspace-level wrappers (used by the CLI)


def ws_path(out_dir, *parts):
    return os.path.join(out_dir, *parts)


def run_gen_data(cfg, out_dir, progress=None):
    records = make_dataset(cfg, cfg.seed)
    write_dataset(ws_path(out_dir, "data"), records)
    _write_run_manifest(out_dir, "gen-data", cfg, {"samples": len(records)})
    return records


def _write_run_manifest(out_dir, stage, cfg, extra):
    doc = {"stage": stage, "config": cfg.to_dict()}
    doc.update(extra)
    os.makedirs(out_dir, exist_ok=True)
    write_manifest_like(ws_path(out_dir, f"{stage}.json"), doc)


def _write_curve(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(values):
            fh.write(f"{i},{v!r}\n")


def run_train_stage1(cfg, out_dir, progress=None):
    data = load_dataset(ws_path(out_dir, "data"))
    net, curve = train_stage1(data, cfg, progress=progress)
    stage_dir = ws_path(out_dir, "stage1")
    os.makedirs(stage_dir, exist_ok=True)
    save_checkpoint(ws_path(stage_dir, "checkpoint.bin"), net.params)
    _write_curve(ws_path(stage_dir, "loss_curve.csv"), curve)
    _write_run_manifest(stage_dir, "train-stage1", cfg, {"steps": len(curve)})
    return net


def run_train_completion(cfg, out_dir, progress=None):
    data = load_dataset(ws_path(out_dir, "data"))
    net, curve = train_completion(data, cfg, progress=progress)
    stage_dir = ws_path(out_dir, "completion")
    os.makedirs(stage_dir, exist_ok=True)
    save_checkpoint(ws_path(stage_dir, "checkpoint.bin"), net.params)
    _write_curve(ws_path(stage_dir, "loss_curve.csv"), curve["steps"])
    _write_run_manifest(stage_dir, "train-completion", cfg,
                        {"initial_cd": curve["initial_cd"], "final_cd": curve["final_cd"]})
    return net


def _load_depth_net(cfg, path):
    net = DepthNet(d_min=cfg.d_min, d_max=cfg.d_max, seed=0)
    return assign_parameters(net, load_checkpoint(path))


def _load_completion_net(cfg, path):
    net = CompletionNet(k=cfg.completion_k(), feature_dim=cfg.feature_dim, seed=0)
    return assign_parameters(net, load_checkpoint(path))


def run_gen_pseudo(cfg, out_dir, progress=None):
    data = load_dataset(ws_path(out_dir, "data"))
    s1_path = ws_path(out_dir, "stage1", "checkpoint.bin")
    cm_path = ws_path(out_dir, "completion", "checkpoint.bin")
    depth_net = _load_depth_net(cfg, s1_path)
    completion_net = _load_completion_net(cfg, cm_path)
    labels = generate_pseudolabels(depth_net, completion_net, data, cfg)
    label_dir = ws_path(out_dir, "labels")
    save_labels(label_dir, labels)
    _write_run_manifest(label_dir, "gen-pseudo", cfg,
                        {"stage1_checkpoint": s1_path, "completion_checkpoint": cm_path,
                         "images": len(labels)})
    return labels


def run_train_stage2(cfg, out_dir, progress=None):
    data = load_dataset(ws_path(out_dir, "data"))
    init = load_checkpoint(ws_path(out_dir, "stage1", "checkpoint.bin"))
    labels = load_labels(ws_path(out_dir, "labels"), len(data.targets))
    net, curve = train_stage2(init, labels, data, cfg, progress=progress)
    stage_dir = ws_path(out_dir, "stage2")
    os.makedirs(stage_dir, exist_ok=True)
    save_checkpoint(ws_path(stage_dir, "checkpoint.bin"), net.params)
    _write_curve(ws_path(stage_dir, "loss_curve.csv"), curve)
    _write_run_manifest(stage_dir, "train-stage2", cfg,
                        {"steps": len(curve), "pseudo_mode": cfg.pseudo_mode})
    return net


def run_eval(cfg, out_dir, checkpoint=None, cap=None):
    data = load_dataset(ws_path(out_dir, "data"))
    if not data.evals:
        raise FileNotFoundError("no target-eval samples with ground-truth depth in the manifest")
    if checkpoint is None:
        for stage in ("stage2", "stage1"):
            candidate = ws_path(out_dir, stage, "checkpoint.bin")
            if os.path.exists(candidate):
                checkpoint = candidate
                break
        else:
            raise FileNotFoundError("no checkpoint found under the workspace (stage2/stage1)")
    net = _load_depth_net(cfg, checkpoint)
    report = evaluate(net, data.evals, cap if cap is not None else cfg.eval_cap, cfg.d_min)
    eval_dir = ws_path(out_dir, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    with open(ws_path(eval_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    _write_run_manifest(eval_dir, "eval", cfg,
                        {"checkpoint": checkpoint, "cap": report.cap, "count": report.count})
    return report
