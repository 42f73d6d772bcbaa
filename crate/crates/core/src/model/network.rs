use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Point3, PointCloud};
use crate::nn::gradcheck::{relative_error, GradCheckReport, FD_EPS};
use crate::nn::{mix_seed, AdamW, Bound, Graph, ParameterStore, Tensor, Var};
use crate::scalar::Real;

use super::config::ModelConfig;
use super::extractor::{FeatureExtractor, ProxySet};
use super::heads::{random_position_encoding, CoarseHead, FoldingDecoder, MissingFeatureGenerator, SensitiveTransformer};

/// End-to-end finite-difference tolerance.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

const PE_SALT: u64 = 0x5045_5f52;

/// The three loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c1: f64,
    pub l_c2: f64,
    pub l_p: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_c1: f64, l_c2: f64, l_p: f64, gamma: f64) -> Self {
        Self { l_c1, l_c2, l_p, total: l_c1 + l_c2 + gamma * l_p }
    }

    /// Component-wise mean, with the total recomputed from the means.
    pub fn mean(items: &[LossBreakdown], gamma: f64) -> Self {
        let n = items.len().max(1) as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self::new(avg(|l| l.l_c1), avg(|l| l.l_c2), avg(|l| l.l_p), gamma)
    }
}

/// One training example: partial input, complete ground truth and the true
/// missing part, each already resampled to the configured counts.
#[derive(Clone, Debug)]
pub struct TrainingSample<T> {
    pub partial: PointCloud<T>,
    pub gt: PointCloud<T>,
    pub missing: PointCloud<T>,
}

/// Proxies of the true missing part, computed without gradient.
#[derive(Clone, Debug)]
pub struct TrueProxies<T> {
    pub value: Tensor<T>,
    pub centers: PointCloud<T>,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars<T> {
    pub existing: ProxySet<T>,
    pub coarse: Var,
    pub pre_mp: Var,
    pub dense: Var,
    pub complete: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_c1: Var,
    pub l_c2: Var,
    pub l_p: Var,
    pub total: Var,
}

/// Output of inference.
#[derive(Clone, Debug)]
pub struct Completion<T> {
    pub coarse: PointCloud<T>,
    pub dense: PointCloud<T>,
    pub complete: PointCloud<T>,
    pub pre_mp: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ProxyFormer<T> {
    config: ModelConfig,
    pub store: ParameterStore<T>,
    pub extractor: FeatureExtractor,
    pub coarse: CoarseHead,
    pub generator: MissingFeatureGenerator,
    pub transformer: SensitiveTransformer,
    pub folding: FoldingDecoder,
}

impl<T: Real> ProxyFormer<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new(seed);
        let extractor = FeatureExtractor::new(&mut store, &config)?;
        let coarse = CoarseHead::new(&mut store, &config)?;
        let generator = MissingFeatureGenerator::new(&mut store, &config)?;
        let transformer = SensitiveTransformer::new(&mut store, &config)?;
        let folding = FoldingDecoder::new(&mut store, &config)?;
        Ok(Self { config, store, extractor, coarse, generator, transformer, folding })
    }

    /// Builds the model for `config` and takes parameter values from `store`.
    pub fn with_store(config: ModelConfig, store: &ParameterStore<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.store.load_values(store)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_count(&self, what: &str, cloud: &PointCloud<T>, expected: usize) -> Result<()> {
        if cloud.len() != expected {
            return Err(invalid(format!(
                "{what} has {} points, profile `{}` expects {expected}",
                cloud.len(),
                self.config.profile
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, partial: &PointCloud<T>, pe_seed: u64) -> Result<ForwardVars<T>> {
        let cfg = &self.config;
        self.check_count("partial input", partial, cfg.input_points)?;
        let existing = self.extractor.forward(g, p, partial)?;
        let coarse = self.coarse.forward(g, p, existing.features)?;
        let f_rmp = self.generator.forward(g, p, existing.features)?;
        let pe_r = g.constant(random_position_encoding(cfg.missing_proxies, cfg.dim, pe_seed));
        let queries = g.add(f_rmp, pe_r)?;
        let keys = existing.value(g)?;
        let pre_mp = self.transformer.forward(g, p, queries, keys)?;
        let dense = self.folding.forward(g, p, pre_mp, coarse)?;
        let input = g.constant(Tensor::matrix(partial.len(), 3, partial.flat())?);
        let complete = g.concat(&[input, dense], 0)?;
        Ok(ForwardVars { existing, coarse, pre_mp, dense, complete })
    }

    /// Runs the extractor on the true missing part in a separate graph, so
    /// nothing computed here receives gradient.
    pub fn true_proxies(&self, missing: &PointCloud<T>) -> Result<TrueProxies<T>> {
        self.check_count("true missing part", missing, self.config.missing_points)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let proxies = self.extractor.forward(&mut g, &p, missing)?;
        let value = proxies.value(&mut g)?;
        Ok(TrueProxies {
            value: g.value(value).clone(),
            centers: PointCloud::new(proxies.centers)?,
        })
    }

    pub fn loss(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        sample: &TrainingSample<T>,
        target: &TrueProxies<T>,
        pe_seed: u64,
    ) -> Result<(LossVars, ForwardVars<T>)> {
        let out = self.forward(g, p, &sample.partial, pe_seed)?;
        let cd = self.config.cd_variant;
        let tcm = g.constant(Tensor::matrix(target.centers.len(), 3, target.centers.flat())?);
        let gt = g.constant(Tensor::matrix(sample.gt.len(), 3, sample.gt.flat())?);
        let true_mp = g.constant(target.value.clone());
        let l_c1 = g.chamfer(out.coarse, tcm, cd)?;
        let l_c2 = g.chamfer(out.complete, gt, cd)?;
        let l_p = g.mse(out.pre_mp, true_mp)?;
        let weighted = g.scale(l_p, T::lit(self.config.gamma));
        let total = g.add(l_c1, l_c2)?;
        let total = g.add(total, weighted)?;
        Ok((LossVars { l_c1, l_c2, l_p, total }, out))
    }

    pub fn breakdown(&self, g: &Graph<T>, l: &LossVars) -> LossBreakdown {
        let v = |x: Var| g.value(x).item().to_f64_lossy();
        LossBreakdown::new(v(l.l_c1), v(l.l_c2), v(l.l_p), self.config.gamma)
    }

    /// Loss of one sample under eval-mode forward, without backward.
    pub fn evaluate_loss(&self, sample: &TrainingSample<T>, pe_seed: u64) -> Result<LossBreakdown> {
        let target = self.true_proxies(&sample.missing)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let (l, _) = self.loss(&mut g, &p, sample, &target, pe_seed)?;
        Ok(self.breakdown(&g, &l))
    }

    /// One optimizer step on the mean loss over `batch`. Samples are
    /// forwarded in parallel; gradients are reduced in batch order.
    pub fn train_step(&mut self, batch: &[TrainingSample<T>], optimizer: &AdamW, seed: u64) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(invalid("train_step: empty batch"));
        }
        let step = self.store.step_count();
        type SampleGrads<T> = (LossBreakdown, Vec<Option<Vec<T>>>);
        let results: Vec<Result<SampleGrads<T>>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, sample)| {
                let target = self.true_proxies(&sample.missing)?;
                let mut g = Graph::training(mix_seed(&[seed, i as u64]), step);
                let p = self.store.bind(&mut g, true);
                let pe_seed = mix_seed(&[seed, step, i as u64, PE_SALT]);
                let (l, _) = self.loss(&mut g, &p, sample, &target, pe_seed)?;
                g.backward(l.total)?;
                Ok((self.breakdown(&g, &l), self.store.collect_grads(&g, &p)))
            })
            .collect();
        self.store.zero_grad();
        let scale = T::one() / T::from_count(batch.len());
        let mut losses = Vec::with_capacity(batch.len());
        for r in results {
            let (loss, grads) = r?;
            self.store.accumulate_grads(&grads, scale);
            losses.push(loss);
        }
        optimizer.step(&mut self.store);
        Ok(LossBreakdown::mean(&losses, self.config.gamma))
    }

    /// Runs `steps` optimizer steps with the configured learning rate and
    /// weight decay. Each step takes the next `batch_size` samples of `data`
    /// in cyclic order (`None` uses all of them) and `on_step` receives the
    /// 1-based step number and its losses.
    pub fn fit(
        &mut self,
        data: &[TrainingSample<T>],
        steps: usize,
        batch_size: Option<usize>,
        seed: u64,
        mut on_step: impl FnMut(usize, &LossBreakdown) -> Result<()>,
    ) -> Result<Vec<LossBreakdown>> {
        if data.is_empty() {
            return Err(invalid("fit: no training samples"));
        }
        let batch_size = batch_size.unwrap_or(data.len()).clamp(1, data.len());
        let optimizer = AdamW::new(self.config.lr, self.config.weight_decay);
        let mut log = Vec::with_capacity(steps);
        for step in 0..steps {
            let batch: Vec<TrainingSample<T>> =
                (0..batch_size).map(|i| data[(step * batch_size + i) % data.len()].clone()).collect();
            let loss = self.train_step(&batch, &optimizer, seed)?;
            on_step(step + 1, &loss)?;
            log.push(loss);
        }
        Ok(log)
    }

    /// Inference with the position encoding drawn from `seed`.
    pub fn complete(&self, partial: &PointCloud<T>, seed: u64) -> Result<Completion<T>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let out = self.forward(&mut g, &p, partial, mix_seed(&[seed, PE_SALT]))?;
        let cloud = |v: Var| PointCloud::from_flat(g.value(v).data());
        Ok(Completion {
            coarse: cloud(out.coarse)?,
            dense: cloud(out.dense)?,
            complete: cloud(out.complete)?,
            pre_mp: g.value(out.pre_mp).clone(),
        })
    }

    /// Writes parameters to `path` in PXF1 form and the configuration to a
    /// JSON file alongside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.store.to_pxf1())?;
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
        let store = ParameterStore::from_pxf1(&std::fs::read(path)?)?;
        Self::with_store(config, &store)
    }
}

/// Config file stored next to a checkpoint.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// A random training sample with the counts of `cfg`; points uniform in the
/// unit cube. Used where only shapes and gradients matter.
pub fn random_sample<T: Real>(cfg: &ModelConfig, seed: u64) -> TrainingSample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = |n: usize| {
        let pts: Vec<Point3<T>> = (0..n)
            .map(|_| [0; 3].map(|_| T::lit(rng.random_range(-1.0..1.0))))
            .collect();
        PointCloud::new(pts).expect("finite")
    };
    let partial = cloud(cfg.input_points);
    let missing = cloud(cfg.missing_points);
    let gt = partial.concat(&cloud(cfg.gt_points.saturating_sub(cfg.input_points).max(1)));
    TrainingSample { partial, gt, missing }
}

/// Checks total-loss gradients of `samples` randomly chosen parameter
/// entries of a model built from `cfg` against central differences.
///
/// Parameters are jittered first so zero-initialized projections do not
/// hide the paths behind them. The true-missing proxies are held fixed, as
/// they are constants of the loss.
pub fn end_to_end_gradcheck(cfg: ModelConfig, seed: u64, samples: usize) -> Result<GradCheckReport> {
    let mut cfg = cfg;
    cfg.dropout = 0.0;
    let mut model = ProxyFormer::<f64>::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1]));
    for p in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let sample = random_sample::<f64>(model.config(), mix_seed(&[seed, 2]));
    let target = model.true_proxies(&sample.missing)?;
    let pe_seed = mix_seed(&[seed, 3]);

    let mut g = Graph::new();
    let p = model.store.bind(&mut g, true);
    let (l, _) = model.loss(&mut g, &p, &sample, &target, pe_seed)?;
    g.backward(l.total)?;
    let grads = model.store.collect_grads(&g, &p);

    let sizes: Vec<usize> = model.store.iter().map(|p| p.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let analytic = grads[pi].as_ref().map_or(0.0, |gr| gr[flat]);
        let eval = |model: &ProxyFormer<f64>| -> Result<f64> {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, false);
            let (l, _) = model.loss(&mut g, &p, &sample, &target, pe_seed)?;
            Ok(g.value(l.total).item())
        };
        let param = model.store.iter_mut().nth(pi).expect("index in range");
        let orig = param.value.data()[flat];
        param.value.data_mut()[flat] = orig + FD_EPS;
        let up = eval(&model)?;
        model.store.iter_mut().nth(pi).expect("index in range").value.data_mut()[flat] = orig - FD_EPS;
        let down = eval(&model)?;
        model.store.iter_mut().nth(pi).expect("index in range").value.data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * FD_EPS);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(GradCheckReport {
        name: format!("end-to-end {} profile", model.config().profile),
        checked: samples,
        max_rel_error: worst,
        tolerance: END_TO_END_TOLERANCE,
        passed: worst <= END_TO_END_TOLERANCE,
    })
}
