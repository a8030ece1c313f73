//! Embedding tables, score functions and batch construction.
//!
//! Every score function used here can be written in two equivalent forms,
//! `p(g1(h, r), t)` and `p(h, g2(t, r))`. Training only needs the pair
//! `(g1, g2)`, captured by [`PairForm`]; inference needs the full score,
//! captured by [`ModelKind`]. The two are chosen independently so a model
//! can be trained with one decomposition and scored with another.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{KnowledgeGraph, Triple};
use crate::error::{Error, Result};
use crate::tensor::{gather_rows, Matrix};
use crate::whiten::{shuffled_dbn_with_cache, ShuffledDbn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn of(self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            Norm::L1 => v.map(f64::abs).sum(),
            Norm::L2 => v.map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// Score function used at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// `f = −‖h + r − t‖_p`
    TransE(Norm),
    /// `f = Σ h ⊙ r ⊙ t`
    DistMult,
}

impl ModelKind {
    pub fn pair_form(self) -> PairForm {
        match self {
            ModelKind::TransE(_) => PairForm::Translational,
            ModelKind::DistMult => PairForm::Bilinear,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ModelKind::TransE(Norm::L1) => 0,
            ModelKind::TransE(Norm::L2) => 1,
            ModelKind::DistMult => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::TransE(Norm::L1)),
            1 => Some(ModelKind::TransE(Norm::L2)),
            2 => Some(ModelKind::DistMult),
            _ => None,
        }
    }

    /// Score of a single `(h, r, t)` given its embedding rows.
    pub fn score_rows(self, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        match self {
            ModelKind::TransE(p) => -p.of(h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t)),
            ModelKind::DistMult => h.iter().zip(r).zip(t).map(|((h, r), t)| h * r * t).sum(),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::TransE(Norm::L1) => f.write_str("transe-l1"),
            ModelKind::TransE(Norm::L2) => f.write_str("transe-l2"),
            ModelKind::DistMult => f.write_str("distmult"),
        }
    }
}

/// The `(g1, g2)` pair that builds the relation-transformed batch matrices
/// `H| = g1(H, R)` and `T| = g2(T, R)`.
///
/// Adding a score function means adding a variant here (its two maps and
/// their backward) plus a [`ModelKind`] for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairForm {
    /// `H| = H + R`, `T| = T − R`
    Translational,
    /// `H| = H ⊙ R`, `T| = T ⊙ R`
    Bilinear,
}

impl PairForm {
    pub fn g1(self, h: &Matrix, r: &Matrix) -> Result<Matrix> {
        match self {
            PairForm::Translational => h.add(r),
            PairForm::Bilinear => h.hadamard(r),
        }
    }

    pub fn g2(self, t: &Matrix, r: &Matrix) -> Result<Matrix> {
        match self {
            PairForm::Translational => t.sub(r),
            PairForm::Bilinear => t.hadamard(r),
        }
    }

    /// Accumulates `dL/dH|` and `dL/dT|` into `dH`, `dR`, `dT`.
    pub fn backward(
        self,
        batch: &Batch,
        d_hpipe: &Matrix,
        d_tpipe: &Matrix,
        grads: &mut LossGradients,
    ) -> Result<()> {
        match self {
            PairForm::Translational => {
                grads.d_head.add_scaled(d_hpipe, 1.0)?;
                grads.d_relation.add_scaled(d_hpipe, 1.0)?;
                grads.d_tail.add_scaled(d_tpipe, 1.0)?;
                grads.d_relation.add_scaled(d_tpipe, -1.0)?;
            }
            PairForm::Bilinear => {
                grads.d_head.add_scaled(&d_hpipe.hadamard(&batch.r)?, 1.0)?;
                grads.d_relation.add_scaled(&d_hpipe.hadamard(&batch.h)?, 1.0)?;
                grads.d_tail.add_scaled(&d_tpipe.hadamard(&batch.r)?, 1.0)?;
                grads.d_relation.add_scaled(&d_tpipe.hadamard(&batch.t)?, 1.0)?;
            }
        }
        Ok(())
    }
}

/// Gradients of a loss with respect to the gathered batch matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub d_head: Matrix,
    pub d_relation: Matrix,
    pub d_tail: Matrix,
}

impl LossGradients {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LossGradients {
            d_head: Matrix::zeros(rows, cols),
            d_relation: Matrix::zeros(rows, cols),
            d_tail: Matrix::zeros(rows, cols),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_head.is_finite() && self.d_relation.is_finite() && self.d_tail.is_finite()
    }
}

/// Entity and relation tables plus the inference score function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub kind: ModelKind,
    pub entities: Matrix,
    pub relations: Matrix,
}

/// Uniform `±6/√d` initialization, entity table drawn before relations.
pub fn init_model<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    kind: ModelKind,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingModel> {
    EmbeddingModel::random(kg.n_entities(), kg.n_relations(), kind, dim, rng)
}

impl EmbeddingModel {
    pub fn random<R: Rng + ?Sized>(
        n_entities: usize,
        n_relations: usize,
        kind: ModelKind,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        let entities = Matrix::from_fn(n_entities, dim, |_, _| rng.gen_range(-bound..=bound));
        let relations = Matrix::from_fn(n_relations, dim, |_, _| rng.gen_range(-bound..=bound));
        Ok(EmbeddingModel {
            kind,
            entities,
            relations,
        })
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn n_entities(&self) -> usize {
        self.entities.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.rows()
    }

    fn check_entity(&self, id: usize) -> Result<()> {
        if id >= self.n_entities() {
            return Err(Error::OutOfRange {
                what: "entity",
                id,
                size: self.n_entities(),
            });
        }
        Ok(())
    }

    fn check_relation(&self, id: usize) -> Result<()> {
        if id >= self.n_relations() {
            return Err(Error::OutOfRange {
                what: "relation",
                id,
                size: self.n_relations(),
            });
        }
        Ok(())
    }

    pub fn score(&self, t: &Triple) -> Result<f64> {
        self.check_entity(t.head)?;
        self.check_relation(t.relation)?;
        self.check_entity(t.tail)?;
        Ok(self.kind.score_rows(
            self.entities.row(t.head),
            self.relations.row(t.relation),
            self.entities.row(t.tail),
        ))
    }

    /// `score(e, relation, tail)` for every entity `e`.
    pub fn score_all_heads(&self, relation: usize, tail: usize) -> Result<Vec<f64>> {
        self.check_relation(relation)?;
        self.check_entity(tail)?;
        let r = self.relations.row(relation);
        let t = self.entities.row(tail);
        Ok(match self.kind {
            ModelKind::TransE(p) => {
                let q: Vec<f64> = t.iter().zip(r).map(|(t, r)| t - r).collect();
                self.distances_to(&q, p)
            }
            ModelKind::DistMult => {
                let q: Vec<f64> = r.iter().zip(t).map(|(r, t)| r * t).collect();
                self.entities.matvec(&q)?
            }
        })
    }

    /// `score(head, relation, e)` for every entity `e`.
    pub fn score_all_tails(&self, head: usize, relation: usize) -> Result<Vec<f64>> {
        self.check_entity(head)?;
        self.check_relation(relation)?;
        let h = self.entities.row(head);
        let r = self.relations.row(relation);
        Ok(match self.kind {
            ModelKind::TransE(p) => {
                let q: Vec<f64> = h.iter().zip(r).map(|(h, r)| h + r).collect();
                self.distances_to(&q, p)
            }
            ModelKind::DistMult => {
                let q: Vec<f64> = h.iter().zip(r).map(|(h, r)| h * r).collect();
                self.entities.matvec(&q)?
            }
        })
    }

    /// `−‖q − e‖_p` for every entity row `e`.
    fn distances_to(&self, q: &[f64], p: Norm) -> Vec<f64> {
        (0..self.n_entities())
            .map(|e| -p.of(q.iter().zip(self.entities.row(e)).map(|(q, e)| q - e)))
            .collect()
    }

    /// Rescales every entity row to unit L2 norm.
    pub fn normalize_entities(&mut self) {
        for i in 0..self.entities.rows() {
            let row = self.entities.row_mut(i);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
}

/// SDBN transforms applied to the four loss inputs of one batch.
#[derive(Debug, Clone)]
pub struct SdbnTransforms {
    pub h_pipe: ShuffledDbn,
    pub h: ShuffledDbn,
    pub t: ShuffledDbn,
    pub t_pipe: ShuffledDbn,
}

/// Per-step batch matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub form: PairForm,
    pub heads: Vec<usize>,
    pub relations: Vec<usize>,
    pub tails: Vec<usize>,
    pub h: Matrix,
    pub r: Matrix,
    pub t: Matrix,
    pub h_pipe: Matrix,
    pub t_pipe: Matrix,
    pub sdbn: Option<SdbnTransforms>,
}

impl Batch {
    /// Builds a batch directly from gathered matrices; ids are left empty.
    pub fn from_matrices<R: Rng + ?Sized>(
        form: PairForm,
        h: Matrix,
        r: Matrix,
        t: Matrix,
        sdbn_group: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if h.rows() == 0 {
            return Err(Error::invalid("batch is empty"));
        }
        let h_pipe = form.g1(&h, &r)?;
        let t_pipe = form.g2(&t, &r)?;
        let sdbn = match sdbn_group {
            None => None,
            Some(g) => Some(SdbnTransforms {
                h_pipe: shuffled_dbn_with_cache(&h_pipe, g, rng)?,
                h: shuffled_dbn_with_cache(&h, g, rng)?,
                t: shuffled_dbn_with_cache(&t, g, rng)?,
                t_pipe: shuffled_dbn_with_cache(&t_pipe, g, rng)?,
            }),
        };
        Ok(Batch {
            form,
            heads: Vec::new(),
            relations: Vec::new(),
            tails: Vec::new(),
            h,
            r,
            t,
            h_pipe,
            t_pipe,
            sdbn,
        })
    }

    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.h.cols()
    }

    /// `(H|, H, T, T|)` as fed to the loss: SDBN outputs when enabled.
    pub fn loss_inputs(&self) -> (&Matrix, &Matrix, &Matrix, &Matrix) {
        match &self.sdbn {
            Some(s) => (&s.h_pipe.output, &s.h.output, &s.t.output, &s.t_pipe.output),
            None => (&self.h_pipe, &self.h, &self.t, &self.t_pipe),
        }
    }
}

/// Gathers `H`, `R`, `T` for `triples` and builds `H|`, `T|` with `form`.
/// When `sdbn_group` is set, each of `H|`, `H`, `T`, `T|` is whitened
/// independently with a fresh permutation drawn from `rng`.
pub fn build_batch<R: Rng + ?Sized>(
    model: &EmbeddingModel,
    triples: &[Triple],
    form: PairForm,
    sdbn_group: Option<usize>,
    rng: &mut R,
) -> Result<Batch> {
    if triples.is_empty() {
        return Err(Error::invalid("cannot build a batch from no triples"));
    }
    let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
    let relations: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
    let h = gather_rows(&model.entities, &heads)?;
    let r = gather_rows(&model.relations, &relations)?;
    let t = gather_rows(&model.entities, &tails)?;
    let mut batch = Batch::from_matrices(form, h, r, t, sdbn_group, rng)?;
    batch.heads = heads;
    batch.relations = relations;
    batch.tails = tails;
    Ok(batch)
}

const MAGIC: &[u8; 6] = b"KGNSF1";
const HEADER_LEN: usize = 6 + 1 + 3 * 8;

/// Checkpoint layout (all integers and floats little-endian):
///
/// ```text
/// 0..6    b"KGNSF1"
/// 6       kind tag: 0 = TransE-L1, 1 = TransE-L2, 2 = DistMult
/// 7..15   u64 entity count
/// 15..23  u64 relation count
/// 23..31  u64 dimension
/// 31..    f64 entity table (row-major), then f64 relation table
/// ```
pub fn encode_checkpoint(model: &EmbeddingModel) -> Vec<u8> {
    let n = model.entities.as_slice().len() + model.relations.as_slice().len();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * n);
    buf.extend_from_slice(MAGIC);
    buf.push(model.kind.tag());
    for v in [model.n_entities(), model.n_relations(), model.dim()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in model.entities.as_slice().iter().chain(model.relations.as_slice()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<EmbeddingModel, String> {
    if bytes.len() < HEADER_LEN || &bytes[..6] != MAGIC {
        return Err("bad magic, not a KGNSF1 checkpoint".into());
    }
    let kind = ModelKind::from_tag(bytes[6]).ok_or_else(|| format!("unknown model kind tag {}", bytes[6]))?;
    let word = |i: usize| u64::from_le_bytes(bytes[7 + 8 * i..15 + 8 * i].try_into().unwrap()) as usize;
    let (ne, nr, d) = (word(0), word(1), word(2));
    let expected = ne
        .checked_add(nr)
        .and_then(|n| n.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or("header sizes overflow")?;
    if bytes.len() != expected {
        return Err(format!(
            "expected {expected} bytes for {ne}x{d} + {nr}x{d} tables, found {}",
            bytes.len()
        ));
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let entities: Vec<f64> = floats.by_ref().take(ne * d).collect();
    let relations: Vec<f64> = floats.collect();
    Ok(EmbeddingModel {
        kind,
        entities: Matrix::from_vec(ne, d, entities).map_err(|e| e.to_string())?,
        relations: Matrix::from_vec(nr, d, relations).map_err(|e| e.to_string())?,
    })
}

pub fn save_checkpoint(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&encode_checkpoint(model)).map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

/// Loads a checkpoint and checks its table sizes against `kg`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<EmbeddingModel> {
    let path = path.as_ref();
    let model = load_checkpoint(path)?;
    if model.n_entities() != kg.n_entities() || model.n_relations() != kg.n_relations() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!(
                "checkpoint has {} entities / {} relations, graph has {} / {}",
                model.n_entities(),
                model.n_relations(),
                kg.n_entities(),
                kg.n_relations()
            ),
        });
    }
    Ok(model)
}
