//! Federated training of a per-pixel segmenter on surrogate artifacts.
//!
//! Each client turns its de-identified images and differential masks into
//! per-pixel features, trains a 3-parameter logistic model, and sends only a
//! weight delta. Messages are canonical JSON with sorted keys and are
//! audited byte-for-byte before they leave the client.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorlab::{a_star_plane, AStarPlane, RgbImage};
use crate::error::{Error, Result};
use crate::maskdiff::{iou, BinaryMask};
use crate::rng::SeedStream;
use crate::twinsynth::{render_original, run_pipeline, Backend, PipelineConfig, PipelineResult};

pub const FEATURE_DIM: usize = 3;
/// Offset a* features are `(value - FEATURE_CENTER) / FEATURE_SCALE`.
pub const FEATURE_CENTER: f64 = 128.0;
pub const FEATURE_SCALE: f64 = 16.0;
/// Upper bound on a serialized [`WireMessage`], independent of image size.
pub const MAX_WIRE_BYTES: usize = 512;
/// Width of the byte windows matched against original images.
pub const LEAK_WINDOW: usize = 64;
const WIRE_KEYS: [&str; 5] = ["client_id", "delta", "manifest_hash", "round", "sample_count"];

/// Per-pixel features: scaled offset a*, its 3×3 edge-clamped mean, and a
/// constant bias plane (implicit, always 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlanes {
    pub width: usize,
    pub height: usize,
    pub a: Vec<f64>,
    pub mean: Vec<f64>,
}

impl FeaturePlanes {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn row(&self, i: usize) -> [f64; FEATURE_DIM] {
        [self.a[i], self.mean[i], 1.0]
    }

    pub fn bias(&self) -> Vec<f64> {
        vec![1.0; self.len()]
    }
}

pub fn featurize_plane(plane: &AStarPlane) -> FeaturePlanes {
    let (w, h) = plane.dims();
    let a: Vec<f64> = plane
        .values
        .iter()
        .map(|&v| (f64::from(v) - FEATURE_CENTER) / FEATURE_SCALE)
        .collect();
    let mut mean = vec![0.0; a.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    s += a[ny * w + nx];
                }
            }
            mean[y * w + x] = s / 9.0;
        }
    }
    FeaturePlanes {
        width: w,
        height: h,
        a,
        mean,
    }
}

pub fn featurize(image: &RgbImage) -> FeaturePlanes {
    featurize_plane(&a_star_plane(image))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(w: &[f64; FEATURE_DIM], x: &[f64; FEATURE_DIM]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegModel {
    pub weights: [f64; FEATURE_DIM],
}

impl SegModel {
    pub fn probability(&self, x: &[f64; FEATURE_DIM]) -> f64 {
        sigmoid(dot(&self.weights, x))
    }

    pub fn predict(&self, features: &FeaturePlanes) -> BinaryMask {
        BinaryMask {
            width: features.width,
            height: features.height,
            bits: (0..features.len()).map(|i| dot(&self.weights, &features.row(i)) > 0.0).collect(),
        }
    }

    pub fn applied(&self, delta: &[f64; FEATURE_DIM]) -> SegModel {
        let mut w = self.weights;
        for (a, d) in w.iter_mut().zip(delta) {
            *a += d;
        }
        SegModel { weights: w }
    }
}

/// Mean per-pixel logistic loss and gradient over a dataset.
pub fn loss_and_grad(model: &SegModel, data: &[(FeaturePlanes, BinaryMask)]) -> (f64, [f64; FEATURE_DIM]) {
    let (mut loss, mut grad, mut n) = (0.0, [0.0; FEATURE_DIM], 0usize);
    for (f, m) in data {
        for i in 0..f.len() {
            let x = f.row(i);
            let z = dot(&model.weights, &x);
            let y = if m.bits[i] { 1.0 } else { 0.0 };
            // log(1 + e^z) - y z, written stably
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            let r = sigmoid(z) - y;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += r * xi;
            }
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    (loss / n, grad.map(|g| g / n))
}

/// Step size below which full-batch gradient descent cannot increase the
/// loss: the logistic Hessian is bounded by `mean ‖x‖² / 4`.
pub fn lr_bound(data: &[(FeaturePlanes, BinaryMask)]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (f, _) in data {
        for i in 0..f.len() {
            s += f.row(i).iter().map(|v| v * v).sum::<f64>();
            n += 1;
        }
    }
    4.0 / (s / n.max(1) as f64)
}

/// Per-pixel gradient contributions `(σ(w·x) − y)·x` of a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub width: usize,
    pub height: usize,
    pub per_pixel: Vec<[f64; FEATURE_DIM]>,
}

pub fn sample_gradient(model: &SegModel, features: &FeaturePlanes, mask: &BinaryMask) -> Result<SampleGradient> {
    if (features.width, features.height) != mask.dims() {
        return Err(Error::dims("sample_gradient", (features.width, features.height), mask.dims()));
    }
    let per_pixel = (0..features.len())
        .map(|i| {
            let x = features.row(i);
            let r = model.probability(&x) - if mask.bits[i] { 1.0 } else { 0.0 };
            x.map(|v| r * v)
        })
        .collect();
    Ok(SampleGradient {
        width: features.width,
        height: features.height,
        per_pixel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub width: usize,
    pub height: usize,
    /// Recovered scaled-a* feature plane.
    pub a: Vec<f64>,
    /// Labels implied by the sign of the residual.
    pub labels: BinaryMask,
    /// Pixels whose gradient vanished and could not be inverted.
    pub unrecovered: usize,
}

/// Inverts per-pixel logistic gradients. The bias feature is 1, so the bias
/// component of each pixel's gradient is the residual `σ − y` itself and
/// dividing by it recovers the features exactly.
pub fn gradient_inversion_probe(grad: &SampleGradient) -> Result<Reconstruction> {
    if grad.per_pixel.iter().all(|g| g.iter().all(|v| *v == 0.0)) {
        return Err(Error::DegenerateGradient);
    }
    let mut a = Vec::with_capacity(grad.per_pixel.len());
    let mut labels = Vec::with_capacity(grad.per_pixel.len());
    let mut unrecovered = 0;
    for g in &grad.per_pixel {
        let r = g[FEATURE_DIM - 1];
        if r == 0.0 {
            unrecovered += 1;
            a.push(0.0);
            labels.push(false);
        } else {
            a.push(g[0] / r);
            labels.push(r < 0.0);
        }
    }
    Ok(Reconstruction {
        width: grad.width,
        height: grad.height,
        a,
        labels: BinaryMask::from_bits(grad.width, grad.height, labels)?,
        unrecovered,
    })
}

/// Pearson correlation; 0 when either side is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "correlation over unequal lengths");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Correlation with the surrogate's true a* features.
    pub corr_surrogate: f64,
    /// Correlation with the withheld original image's a* features.
    pub corr_original: f64,
    /// Correlation with the original identity's feature-dot indicator plane.
    pub corr_original_identity: f64,
    pub unrecovered: usize,
}

pub fn leakage_report(
    recon: &Reconstruction,
    surrogate: &FeaturePlanes,
    original: &FeaturePlanes,
    original_identity: &BinaryMask,
) -> LeakageReport {
    let indicator: Vec<f64> = original_identity.bits.iter().map(|&b| f64::from(u8::from(b))).collect();
    LeakageReport {
        corr_surrogate: correlation(&recon.a, &surrogate.a),
        corr_original: correlation(&recon.a, &original.a),
        corr_original_identity: correlation(&recon.a, &indicator),
        unrecovered: recon.unrecovered,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCase {
    pub reconstruction: Reconstruction,
    pub report: LeakageReport,
}

/// Attacks the single-image gradient a client would compute on one pipeline
/// case, then scores the reconstruction against the surrogate and against
/// the withheld original.
pub fn probe_pipeline_case(
    config: &PipelineConfig,
    backend: &Backend<'_>,
    case_seed: u64,
    model: &SegModel,
) -> Result<ProbeCase> {
    let result = run_pipeline(config, backend, case_seed)?;
    let surrogate = featurize(&result.de_identified);
    let grad = sample_gradient(model, &surrogate, &result.mask)?;
    let reconstruction = gradient_inversion_probe(&grad)?;

    let scene = backend.scene();
    let original = featurize(&render_original(config, backend, case_seed)?);
    let dot = scene.identity(config.source_identity)?.feature.footprint(scene.width, scene.height);
    let report = leakage_report(&reconstruction, &surrogate, &original, &dot);
    Ok(ProbeCase { reconstruction, report })
}

/// A client's local data: surrogate features and differential masks only.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: u32,
    pub dataset: Vec<(FeaturePlanes, BinaryMask)>,
    pub model: SegModel,
    /// Hash over the manifests of the cases in the dataset.
    pub manifest_hash: String,
}

impl ClientState {
    /// Builds a client from pipeline outputs; no original image is involved.
    pub fn from_results(id: u32, results: &[PipelineResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::param("dataset", "client dataset is empty"));
        }
        let mut h = Sha256::new();
        for r in results {
            h.update(r.manifest_hash().as_bytes());
        }
        Ok(Self {
            id,
            dataset: results.iter().map(|r| (featurize(&r.de_identified), r.mask.clone())).collect(),
            model: SegModel::default(),
            manifest_hash: hex::encode(h.finalize()),
        })
    }

    pub fn sample_count(&self) -> u64 {
        self.dataset.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub delta: [f64; FEATURE_DIM],
    /// Loss before each epoch, then after the last one.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent from `start`; returns end − start.
pub fn local_train(state: &ClientState, start: &SegModel, epochs: usize, lr: f64) -> Result<LocalUpdate> {
    if state.dataset.is_empty() {
        return Err(Error::param("dataset", "client dataset is empty"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::param("lr", "must be positive"));
    }
    let mut model = *start;
    let mut losses = Vec::with_capacity(epochs + 1);
    for epoch in 0..=epochs {
        let (loss, grad) = loss_and_grad(&model, &state.dataset);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step: epoch, loss });
        }
        losses.push(loss);
        if epoch == epochs {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
    let mut delta = [0.0; FEATURE_DIM];
    for ((d, end), begin) in delta.iter_mut().zip(model.weights).zip(start.weights) {
        *d = end - begin;
    }
    Ok(LocalUpdate { delta, losses })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub round: u32,
    pub client_id: u32,
    pub delta: [f64; FEATURE_DIM],
    pub sample_count: u64,
    pub manifest_hash: String,
}

impl WireMessage {
    /// Canonical bytes: compact JSON, keys sorted.
    pub fn to_bytes(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("wire message serializes");
        serde_json::to_vec(&value).expect("json value serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Sample-count weighted mean of deltas added to `base`. Messages are summed
/// in client-id order, so delivery order does not matter.
pub fn fedavg(messages: &[WireMessage], base: &SegModel) -> Result<SegModel> {
    let first = messages
        .first()
        .ok_or_else(|| Error::param("messages", "nothing to aggregate"))?;
    if messages.iter().any(|m| m.round != first.round) {
        return Err(Error::param("messages", "messages from different rounds"));
    }
    let mut ordered: Vec<&WireMessage> = messages.iter().collect();
    ordered.sort_by_key(|m| m.client_id);
    let total: u64 = ordered.iter().map(|m| m.sample_count).sum();
    if total == 0 {
        return Err(Error::param("messages", "total sample count is zero"));
    }
    let mut acc = [0.0; FEATURE_DIM];
    for m in ordered {
        let w = m.sample_count as f64 / total as f64;
        for (a, d) in acc.iter_mut().zip(m.delta) {
            *a += w * d;
        }
    }
    Ok(base.applied(&acc))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum AuditVerdict {
    Pass,
    Fail { reason: String },
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, AuditVerdict::Pass)
    }
}

/// Rabin–Karp rolling hash over fixed windows.
fn window_hashes(bytes: &[u8]) -> impl Iterator<Item = u64> + '_ {
    const BASE: u64 = 1_099_511_628_211;
    let top = (0..LEAK_WINDOW - 1).fold(1u64, |p, _| p.wrapping_mul(BASE));
    let mut h = 0u64;
    bytes.iter().enumerate().filter_map(move |(i, &b)| {
        if i >= LEAK_WINDOW {
            h = h.wrapping_sub(u64::from(bytes[i - LEAK_WINDOW]).wrapping_mul(top));
        }
        h = h.wrapping_mul(BASE).wrapping_add(u64::from(b));
        (i + 1 >= LEAK_WINDOW).then_some(h)
    })
}

/// Client-side wire auditor. Knows the hashes of every 64-byte window of the
/// client's original images.
#[derive(Debug, Clone, Default)]
pub struct Auditor {
    windows: HashSet<u64>,
}

impl Auditor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_original(&mut self, image: &RgbImage) {
        self.windows.extend(window_hashes(image.as_bytes()));
    }

    pub fn registered_windows(&self) -> usize {
        self.windows.len()
    }

    /// Checks, in order: the size bound, original-image leakage, and exact
    /// canonical schema.
    pub fn audit(&self, bytes: &[u8]) -> AuditVerdict {
        let fail = |reason: String| AuditVerdict::Fail { reason };
        if bytes.len() > MAX_WIRE_BYTES {
            return fail(format!("size bound: {} bytes exceeds {MAX_WIRE_BYTES}", bytes.len()));
        }
        if let Some(pos) = window_hashes(bytes).position(|h| self.windows.contains(&h)) {
            return fail(format!("leakage match: bytes {pos}..{} match an original image", pos + LEAK_WINDOW));
        }
        let value: serde_json::Value = match serde_json::from_slice(bytes) {
            Ok(v) => v,
            Err(e) => return fail(format!("schema: not JSON ({e})")),
        };
        let Some(obj) = value.as_object() else {
            return fail("schema: not an object".into());
        };
        let keys: BTreeSet<&str> = obj.keys().map(String::as_str).collect();
        let expected: BTreeSet<&str> = WIRE_KEYS.into_iter().collect();
        if keys != expected {
            return fail(format!("schema: fields {keys:?}, expected {expected:?}"));
        }
        let msg = match WireMessage::from_bytes(bytes) {
            Ok(m) => m,
            Err(e) => return fail(format!("schema: {e}")),
        };
        if msg.delta.iter().any(|d| !d.is_finite()) {
            return fail("schema: non-finite delta".into());
        }
        if msg.manifest_hash.len() != 64 || !msg.manifest_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return fail("schema: manifest_hash is not a sha-256 hex digest".into());
        }
        if msg.to_bytes() != bytes {
            return fail("schema: bytes are not in canonical form".into());
        }
        AuditVerdict::Pass
    }
}

pub fn audit_wire(bytes: &[u8], auditor: &Auditor) -> AuditVerdict {
    auditor.audit(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub weights: [f64; FEATURE_DIM],
    /// `(client id, local loss after training)`, by client id.
    pub client_losses: Vec<(u32, f64)>,
    pub heldout_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub round: u32,
    pub client_id: u32,
    pub bytes: usize,
    pub verdict: AuditVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub cases_per_client: usize,
    pub heldout_cases: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n_clients: 4,
            rounds: 5,
            epochs: 10,
            lr: 1.0,
            cases_per_client: 3,
            heldout_cases: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationReport {
    pub rounds: Vec<RoundReport>,
    pub audit_log: Vec<AuditEntry>,
    /// Held-out IoU of each client's own model after round one.
    pub round1_local_iou: Vec<(u32, f64)>,
    pub final_model: SegModel,
}

impl FederationReport {
    pub fn rounds_csv(&self) -> String {
        let mut s = String::from("round,w_a,w_mean,w_bias,heldout_iou,mean_client_loss\n");
        for r in &self.rounds {
            let mean_loss = r.client_losses.iter().map(|(_, l)| l).sum::<f64>() / r.client_losses.len().max(1) as f64;
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round, r.weights[0], r.weights[1], r.weights[2], r.heldout_iou, mean_loss
            ));
        }
        s
    }

    pub fn audit_jsonl(&self) -> String {
        self.audit_log
            .iter()
            .map(|e| serde_json::to_string(e).expect("audit entry serializes") + "\n")
            .collect()
    }
}

/// Held-out evaluation set: surrogate features with ground-truth masks.
#[derive(Debug, Clone)]
pub struct HeldOut {
    pub cases: Vec<(FeaturePlanes, BinaryMask)>,
}

impl HeldOut {
    pub fn build(config: &PipelineConfig, backend: &Backend<'_>, seeds: &SeedStream, n: usize) -> Result<Self> {
        let scene = backend.scene();
        let gt = crate::toyflow::oracle_ground_truth_mask(scene);
        let cases = (0..n)
            .map(|j| {
                let (src, sur) = case_identities(scene.identity_count, j, j);
                let cfg = PipelineConfig {
                    source_identity: src,
                    surrogate_identity: sur,
                    ..config.clone()
                };
                let r = run_pipeline(&cfg, backend, seeds.seed("heldout", j as u64))?;
                Ok((featurize(&r.de_identified), gt.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cases })
    }

    pub fn mean_iou(&self, model: &SegModel) -> Result<f64> {
        let mut s = 0.0;
        for (f, m) in &self.cases {
            s += iou(&model.predict(f), m)?;
        }
        Ok(s / self.cases.len().max(1) as f64)
    }
}

fn case_identities(count: usize, surrogate: usize, j: usize) -> (usize, usize) {
    let sur = surrogate % count;
    let src = (sur + 1 + j % (count - 1).max(1)) % count;
    (src, sur)
}

/// Per-client case list: `(pipeline config, case seed)`. Client `k` draws
/// surrogates from the identities `{i : i mod n_clients == k}` (non-IID
/// split).
pub fn client_case_plan(
    config: &FederationConfig,
    pipeline: &PipelineConfig,
    identity_count: usize,
    seeds: &SeedStream,
) -> Result<Vec<Vec<(PipelineConfig, u64)>>> {
    if config.n_clients == 0 || config.n_clients > identity_count {
        return Err(Error::param(
            "clients",
            format!("need between 1 and {identity_count} clients for disjoint identity subsets"),
        ));
    }
    if identity_count < 2 {
        return Err(Error::param("clients", "de-identification needs at least two identities"));
    }
    if config.cases_per_client == 0 {
        return Err(Error::param("cases_per_client", "must be at least 1"));
    }
    Ok((0..config.n_clients)
        .map(|k| {
            let subset: Vec<usize> = (k..identity_count).step_by(config.n_clients).collect();
            let client_seeds = seeds.child("client", k as u64);
            (0..config.cases_per_client)
                .map(|j| {
                    let (src, sur) = case_identities(identity_count, subset[j % subset.len()], j);
                    let cfg = PipelineConfig {
                        source_identity: src,
                        surrogate_identity: sur,
                        ..pipeline.clone()
                    };
                    (cfg, client_seeds.seed("case", j as u64))
                })
                .collect()
        })
        .collect())
}

/// Builds the clients' local datasets. Originals are rendered only to
/// register them with the client's auditor and are dropped before training.
pub fn build_clients(
    config: &FederationConfig,
    pipeline: &PipelineConfig,
    backend: &Backend<'_>,
    seeds: &SeedStream,
) -> Result<Vec<(ClientState, Auditor)>> {
    let plan = client_case_plan(config, pipeline, backend.scene().identity_count, seeds)?;
    plan.into_par_iter()
        .enumerate()
        .map(|(k, cases)| {
            let mut auditor = Auditor::new();
            let mut results = Vec::with_capacity(cases.len());
            for (cfg, case_seed) in &cases {
                auditor.register_original(&render_original(cfg, backend, *case_seed)?);
                results.push(run_pipeline(cfg, backend, *case_seed)?);
            }
            Ok((ClientState::from_results(k as u32, &results)?, auditor))
        })
        .collect()
}

/// Synchronous star-topology federation.
pub fn run_federation(
    config: &FederationConfig,
    pipeline: &PipelineConfig,
    backend: &Backend<'_>,
    seed: u64,
) -> Result<FederationReport> {
    if config.rounds == 0 {
        return Err(Error::param("rounds", "must be at least 1"));
    }
    let seeds = SeedStream::new(seed);
    let clients = build_clients(config, pipeline, backend, &seeds)?;
    let heldout = HeldOut::build(pipeline, backend, &seeds, config.heldout_cases.max(1))?;
    federate(config, &clients, &heldout)
}

/// The round loop over prepared clients.
pub fn federate(config: &FederationConfig, clients: &[(ClientState, Auditor)], heldout: &HeldOut) -> Result<FederationReport> {
    let mut global = SegModel::default();
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut audit_log = Vec::new();
    let mut round1_local_iou = Vec::new();
    for round in 0..config.rounds as u32 {
        let updates = clients
            .par_iter()
            .map(|(client, auditor)| {
                let update = local_train(client, &global, config.epochs, config.lr)?;
                let msg = WireMessage {
                    round,
                    client_id: client.id,
                    delta: update.delta,
                    sample_count: client.sample_count(),
                    manifest_hash: client.manifest_hash.clone(),
                };
                let bytes = msg.to_bytes();
                let verdict = auditor.audit(&bytes);
                Ok((client.id, update, bytes, verdict))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut messages = Vec::with_capacity(updates.len());
        let mut client_losses = Vec::with_capacity(updates.len());
        for (id, update, bytes, verdict) in updates {
            audit_log.push(AuditEntry {
                round,
                client_id: id,
                bytes: bytes.len(),
                verdict: verdict.clone(),
            });
            if let AuditVerdict::Fail { reason } = verdict {
                return Err(Error::AuditFailed {
                    client_id: id,
                    round,
                    reason,
                });
            }
            if round == 0 {
                round1_local_iou.push((id, heldout.mean_iou(&global.applied(&update.delta))?));
            }
            client_losses.push((id, *update.losses.last().expect("at least one loss")));
            // the aggregator only ever sees the wire bytes
            messages.push(WireMessage::from_bytes(&bytes)?);
        }
        global = fedavg(&messages, &global)?;
        rounds.push(RoundReport {
            round,
            weights: global.weights,
            client_losses,
            heldout_iou: heldout.mean_iou(&global)?,
        });
    }
    Ok(FederationReport {
        rounds,
        audit_log,
        round1_local_iou,
        final_model: global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(client_id: u32, count: u64, delta: [f64; 3]) -> WireMessage {
        WireMessage {
            round: 0,
            client_id,
            delta,
            sample_count: count,
            manifest_hash: "ab".repeat(32),
        }
    }

    #[test]
    fn fedavg_cases() {
        let base = SegModel { weights: [1.0, 2.0, 3.0] };
        let one = fedavg(&[msg(0, 5, [0.5, 0.0, -1.0])], &base).unwrap();
        assert_eq!(one.weights, [1.5, 2.0, 2.0]);
        let sym = fedavg(&[msg(0, 2, [0.3, -0.7, 1.1]), msg(1, 2, [-0.3, 0.7, -1.1])], &base).unwrap();
        assert_eq!(sym.weights, base.weights);
        let w = fedavg(&[msg(0, 1, [4.0, 0.0, 0.0]), msg(1, 3, [0.0, 0.0, 0.0])], &base).unwrap();
        assert_eq!(w.weights[0], 2.0);
        assert!(fedavg(&[], &base).is_err());
        let mut late = msg(1, 1, [0.0; 3]);
        late.round = 1;
        assert!(fedavg(&[msg(0, 1, [0.0; 3]), late], &base).is_err());
    }

    #[test]
    fn featurize_cases() {
        let f = featurize(&RgbImage::filled(3, 3, [180, 120, 110]));
        assert!(f.a.iter().all(|&v| v == f.a[0]));
        assert!(f.mean.iter().all(|&v| (v - f.a[0]).abs() < 1e-12));
        assert!(f.bias().iter().all(|&v| v == 1.0));

        let mut values = vec![128u8; 25];
        values[12] = 128 + 72;
        let f = featurize_plane(&AStarPlane { width: 5, height: 5, values });
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&x) && (1..=3).contains(&y);
                let want = if inside { 0.5 } else { 0.0 };
                assert!((f.mean[y * 5 + x] - want).abs() < 1e-12, "({x},{y})");
            }
        }
    }

    fn toy_dataset() -> Vec<(FeaturePlanes, BinaryMask)> {
        let f = featurize_plane(&AStarPlane { width: 2, height: 1, values: vec![100, 180] });
        vec![(f, BinaryMask::from_bits(2, 1, vec![false, true]).unwrap())]
    }

    #[test]
    fn local_training_descends() {
        let client = ClientState {
            id: 0,
            dataset: toy_dataset(),
            model: SegModel::default(),
            manifest_hash: "00".repeat(32),
        };
        let zero = local_train(&client, &SegModel::default(), 0, 0.5).unwrap();
        assert_eq!(zero.delta, [0.0; 3]);
        let lr = 0.9 * lr_bound(&client.dataset);
        let up = local_train(&client, &SegModel::default(), 20, lr).unwrap();
        for w in up.losses.windows(2) {
            assert!(w[1] < w[0], "{:?}", up.losses);
        }
        assert!(local_train(&client, &SegModel::default(), 1, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_dataset();
        let model = SegModel { weights: [0.3, -0.8, 0.2] };
        let (_, g) = loss_and_grad(&model, &data);
        let h = 1e-6;
        for k in 0..FEATURE_DIM {
            let mut p = model;
            p.weights[k] += h;
            let mut m = model;
            m.weights[k] -= h;
            let num = (loss_and_grad(&p, &data).0 - loss_and_grad(&m, &data).0) / (2.0 * h);
            assert!((num - g[k]).abs() / num.abs().max(1e-12) < 1e-5, "{k}: {num} vs {}", g[k]);
        }
    }

    #[test]
    fn probe_rejects_zero_gradient() {
        let g = SampleGradient { width: 2, height: 1, per_pixel: vec![[0.0; 3]; 2] };
        assert!(matches!(gradient_inversion_probe(&g), Err(Error::DegenerateGradient)));
    }

    #[test]
    fn wire_round_trip_and_audit() {
        let m = msg(3, 7, [0.25, -1.5, 3.0e-9]);
        let bytes = m.to_bytes();
        assert!(bytes.starts_with(b"{\"client_id\":3,\"delta\":"));
        assert_eq!(WireMessage::from_bytes(&bytes).unwrap(), m);
        assert!(Auditor::new().audit(&bytes).passed());

        let mut extra: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        extra["note"] = "x".into();
        let verdict = Auditor::new().audit(&serde_json::to_vec(&extra).unwrap());
        assert!(matches!(verdict, AuditVerdict::Fail { reason } if reason.starts_with("schema")));
    }

    #[test]
    fn rolling_hash_matches_direct() {
        let bytes: Vec<u8> = (0..200u32).map(|i| (i * 37 % 251) as u8).collect();
        let rolled: Vec<u64> = window_hashes(&bytes).collect();
        assert_eq!(rolled.len(), bytes.len() - LEAK_WINDOW + 1);
        for (i, h) in rolled.iter().enumerate() {
            assert_eq!(*h, window_hashes(&bytes[i..i + LEAK_WINDOW]).next().unwrap());
        }
    }
}
