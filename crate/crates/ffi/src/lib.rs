//! C ABI for `kgnsf`.
//!
//! Graphs and models are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`KgnsfStatus`]; on failure the
//! message is available from [`kgnsf_last_error`] on the same thread.
//! Panics never cross the boundary and are reported as
//! [`KgnsfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kgnsf::models::{init_model, load_checkpoint, load_checkpoint_for, save_checkpoint};
use kgnsf::training::{stream_rng, streams};
use kgnsf::{
    evaluate, load_knowledge_graph, EmbeddingModel, Error, KnowledgeGraph, LossConfig, Method, ModelKind, Norm,
    Objective, Split, TrainConfig, Triple,
};

/// Opaque loaded knowledge graph.
pub struct KgnsfGraph(KnowledgeGraph);

/// Opaque embedding model.
pub struct KgnsfModel(EmbeddingModel);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgnsfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    OutOfRange = 5,
    Checkpoint = 6,
    Training = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgnsfModelKind {
    TranseL1 = 0,
    TranseL2 = 1,
    Distmult = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgnsfSplit {
    Train = 0,
    Valid = 1,
    Test = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgnsfObjective {
    Bt = 0,
    Hsic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KgnsfStats {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KgnsfMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_triples: usize,
}

/// Options for negative-sampling-free training. Obtain defaults from
/// [`kgnsf_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KgnsfTrainOptions {
    pub kind: KgnsfModelKind,
    pub dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Values `<= 0` select `1/dim`.
    pub lambda: f64,
    pub objective: KgnsfObjective,
    /// 0 disables ShuffledDBN.
    pub sdbn_group: usize,
    pub extended_terms: bool,
}

/// Summary of a finished training run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KgnsfTrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// NaN when no validation split was available.
    pub best_val_mrr: f64,
    pub final_train_loss: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kgnsf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kgnsf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

struct Failure(KgnsfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => KgnsfStatus::Io,
            Error::Parse { .. } | Error::EmptyTrain(_) => KgnsfStatus::Parse,
            Error::OutOfRange { .. } => KgnsfStatus::OutOfRange,
            Error::Checkpoint { .. } => KgnsfStatus::Checkpoint,
            Error::Epoch { .. } | Error::NonFiniteGradient(_) => KgnsfStatus::Training,
            _ => KgnsfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(KgnsfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(KgnsfStatus::InvalidArgument, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> KgnsfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => KgnsfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            KgnsfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn kind_of(k: KgnsfModelKind) -> ModelKind {
    match k {
        KgnsfModelKind::TranseL1 => ModelKind::TransE(Norm::L1),
        KgnsfModelKind::TranseL2 => ModelKind::TransE(Norm::L2),
        KgnsfModelKind::Distmult => ModelKind::DistMult,
    }
}

fn kind_to_c(k: ModelKind) -> KgnsfModelKind {
    match k {
        ModelKind::TransE(Norm::L1) => KgnsfModelKind::TranseL1,
        ModelKind::TransE(Norm::L2) => KgnsfModelKind::TranseL2,
        ModelKind::DistMult => KgnsfModelKind::Distmult,
    }
}

/// Loads three tab-separated triple files into `*out`.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_graph_load(
    train: *const c_char,
    valid: *const c_char,
    test: *const c_char,
    out: *mut *mut KgnsfGraph,
) -> KgnsfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let kg = load_knowledge_graph(
            path_arg(train, "train")?,
            path_arg(valid, "valid")?,
            path_arg(test, "test")?,
        )?;
        *out = Box::into_raw(Box::new(KgnsfGraph(kg)));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from [`kgnsf_graph_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_graph_free(graph: *mut KgnsfGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_graph_stats(graph: *const KgnsfGraph, out: *mut KgnsfStats) -> KgnsfStatus {
    guard(|| {
        let s = as_ref(graph, "graph")?.0.stats();
        *out_arg(out, "out")? = KgnsfStats {
            n_entities: s.n_entities,
            n_relations: s.n_relations,
            n_train: s.n_train,
            n_valid: s.n_valid,
            n_test: s.n_test,
        };
        Ok(())
    })
}

/// Looks up the id of an entity label.
///
/// # Safety
/// `graph` must be a live handle, `label` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_graph_entity_id(
    graph: *const KgnsfGraph,
    label: *const c_char,
    out: *mut usize,
) -> KgnsfStatus {
    guard(|| {
        let kg = &as_ref(graph, "graph")?.0;
        let label = path_arg(label, "label")?;
        let label = label.to_string_lossy();
        let id = kg
            .entities
            .id(&label)
            .ok_or_else(|| Failure(KgnsfStatus::OutOfRange, format!("unknown entity `{label}`")))?;
        *out_arg(out, "out")? = id;
        Ok(())
    })
}

/// Looks up the id of a relation label.
///
/// # Safety
/// `graph` must be a live handle, `label` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_graph_relation_id(
    graph: *const KgnsfGraph,
    label: *const c_char,
    out: *mut usize,
) -> KgnsfStatus {
    guard(|| {
        let kg = &as_ref(graph, "graph")?.0;
        let label = path_arg(label, "label")?;
        let label = label.to_string_lossy();
        let id = kg
            .relations
            .id(&label)
            .ok_or_else(|| Failure(KgnsfStatus::OutOfRange, format!("unknown relation `{label}`")))?;
        *out_arg(out, "out")? = id;
        Ok(())
    })
}

/// Reads a checkpoint. When `graph` is non-null its entity and relation
/// counts must match the checkpoint.
///
/// # Safety
/// `path` NUL-terminated; `graph` null or live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_model_load(
    path: *const c_char,
    graph: *const KgnsfGraph,
    out: *mut *mut KgnsfModel,
) -> KgnsfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let model = match graph.as_ref() {
            Some(g) => load_checkpoint_for(&path, &g.0)?,
            None => load_checkpoint(&path)?,
        };
        *out = Box::into_raw(Box::new(KgnsfModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` live, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_model_save(model: *const KgnsfModel, path: *const c_char) -> KgnsfStatus {
    guard(|| {
        let model = &as_ref(model, "model")?.0;
        save_checkpoint(model, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_model_free(model: *mut KgnsfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model kind and table sizes; any output pointer may be null.
///
/// # Safety
/// `model` live; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_model_info(
    model: *const KgnsfModel,
    kind: *mut KgnsfModelKind,
    n_entities: *mut usize,
    n_relations: *mut usize,
    dim: *mut usize,
) -> KgnsfStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        if let Some(k) = kind.as_mut() {
            *k = kind_to_c(m.kind);
        }
        for (p, v) in [(n_entities, m.n_entities()), (n_relations, m.n_relations()), (dim, m.dim())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Plausibility score of `(head, relation, tail)`; higher is more plausible.
///
/// # Safety
/// `model` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_model_score(
    model: *const KgnsfModel,
    head: usize,
    relation: usize,
    tail: usize,
    out: *mut f64,
) -> KgnsfStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        *out_arg(out, "out")? = m.score(&Triple::new(head, relation, tail))?;
        Ok(())
    })
}

unsafe fn write_scores(scores: Vec<f64>, out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < scores.len() {
        return Err(Failure(
            KgnsfStatus::BufferTooSmall,
            format!("need room for {} scores, got {len}", scores.len()),
        ));
    }
    ptr::copy_nonoverlapping(scores.as_ptr(), out, scores.len());
    Ok(())
}

/// Scores of `(head, relation, e)` for every entity `e`, written to
/// `out[0..n_entities]`.
///
/// # Safety
/// `model` live; `out` points to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_model_score_tails(
    model: *const KgnsfModel,
    head: usize,
    relation: usize,
    out: *mut f64,
    len: usize,
) -> KgnsfStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        write_scores(m.score_all_tails(head, relation)?, out, len)
    })
}

/// Scores of `(e, relation, tail)` for every entity `e`, written to
/// `out[0..n_entities]`.
///
/// # Safety
/// `model` live; `out` points to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_model_score_heads(
    model: *const KgnsfModel,
    relation: usize,
    tail: usize,
    out: *mut f64,
    len: usize,
) -> KgnsfStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        write_scores(m.score_all_heads(relation, tail)?, out, len)
    })
}

/// Raw or filtered link-prediction metrics on one split.
///
/// # Safety
/// Handles live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_evaluate(
    model: *const KgnsfModel,
    graph: *const KgnsfGraph,
    split: KgnsfSplit,
    filtered: bool,
    out: *mut KgnsfMetrics,
) -> KgnsfStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let kg = &as_ref(graph, "graph")?.0;
        if m.n_entities() != kg.n_entities() || m.n_relations() != kg.n_relations() {
            return Err(invalid("model tables do not match the graph"));
        }
        let split = match split {
            KgnsfSplit::Train => Split::Train,
            KgnsfSplit::Valid => Split::Valid,
            KgnsfSplit::Test => Split::Test,
        };
        let r = evaluate(m, kg, split, filtered)?;
        *out_arg(out, "out")? = KgnsfMetrics {
            mr: r.mr,
            mrr: r.mrr,
            hits1: r.hits1,
            hits3: r.hits3,
            hits10: r.hits10,
            n_triples: r.n_triples,
        };
        Ok(())
    })
}

/// Defaults: TransE-L2, d=100, lr=1e-3, b=1000, 200 epochs, patience 5,
/// seed 0, alpha 0.5, lambda 1/d, BT objective, no SDBN.
#[no_mangle]
pub extern "C" fn kgnsf_train_options_default() -> KgnsfTrainOptions {
    KgnsfTrainOptions {
        kind: KgnsfModelKind::TranseL2,
        dim: 100,
        lr: 1e-3,
        batch_size: 1000,
        max_epochs: 200,
        patience: 5,
        seed: 0,
        alpha: 0.5,
        lambda: 0.0,
        objective: KgnsfObjective::Bt,
        sdbn_group: 0,
        extended_terms: false,
    }
}

/// Trains a model without negative sampling and returns the parameters of
/// the best validated epoch in `*out`. `summary` may be null.
///
/// # Safety
/// `graph` live, `options` readable, `out` writable, `summary` null or writable.
#[no_mangle]
pub unsafe extern "C" fn kgnsf_train(
    graph: *const KgnsfGraph,
    options: *const KgnsfTrainOptions,
    out: *mut *mut KgnsfModel,
    summary: *mut KgnsfTrainSummary,
) -> KgnsfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let kg = &as_ref(graph, "graph")?.0;
        let o = *as_ref(options, "options")?;
        let kind = kind_of(o.kind);
        let config = TrainConfig {
            lr: o.lr,
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
            patience: o.patience,
            seed: o.seed,
            eval_every: 1,
            method: Method::NegativeSamplingFree {
                loss: LossConfig {
                    objective: match o.objective {
                        KgnsfObjective::Bt => Objective::Bt,
                        KgnsfObjective::Hsic => Objective::Hsic,
                    },
                    lambda: (o.lambda > 0.0).then_some(o.lambda),
                    alpha: o.alpha,
                    extended_terms: o.extended_terms,
                },
                form: kind.pair_form(),
                sdbn_group: (o.sdbn_group > 0).then_some(o.sdbn_group),
            },
        };
        let model = init_model(kg, kind, o.dim, &mut stream_rng(o.seed, streams::INIT))?;
        let outcome = kgnsf::train(kg, model, &config)?;
        if let Some(s) = summary.as_mut() {
            *s = KgnsfTrainSummary {
                epochs_run: outcome.records.len(),
                best_epoch: outcome.best_epoch,
                best_val_mrr: outcome.best_val_mrr.unwrap_or(f64::NAN),
                final_train_loss: outcome.records.last().map_or(f64::NAN, |r| r.train_loss),
            };
        }
        *out = Box::into_raw(Box::new(KgnsfModel(outcome.model)));
        Ok(())
    })
}
