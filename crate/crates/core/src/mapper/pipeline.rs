use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use nalgebra::Matrix6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{MappingMode, PipelineConfig};
use super::refine::{refine_pose, RefinementResult};
use super::rings::{gate_decision, horizontal_distance, marginal_traces, ring_partition, Ring, RingMember};
use super::train::{backproject_frame, MapTrainer};
use crate::error::{Error, Result};
use crate::eval::{evaluate_trajectory, psnr, write_tum};
use crate::filters::{extract_odometry_deltas, initialize_from_landmark, run_odometry, OdometryResult};
use crate::geometry::{PinholeCamera, RigidPose};
use crate::graph::{add_external_pose_factors, solve_lm, Estimates, Factor, FactorGraph, VarId, VariableKind};
use crate::render::{render, ssim, ReconWeights, RenderSettings, SplatMap};
use crate::sim::{read_log, SensorLog};

/// Variable id of the landmark; robot poses use their image index.
pub const LANDMARK_ID: VarId = VarId::MAX;

/// One row of the per-ring metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingMetrics {
    pub ring: usize,
    /// Frames integrated so far.
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Rigidly aligned ATE of the current estimates; NaN without ground truth.
    pub ate_so_far: f64,
    pub gaussian_count: usize,
    pub reopt_triggered: bool,
}

/// Inputs and outcome of one re-optimization gate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateRecord {
    pub ring: usize,
    /// Mean marginal covariance traces; NaN when the marginals were singular.
    pub frontier_trace: f64,
    pub seed_trace: f64,
    pub passed: bool,
    pub accepted_refinements: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub map: SplatMap,
    /// Final graph estimates at the keyframe timestamps.
    pub trajectory: Vec<(f64, RigidPose)>,
    /// Graph solution before any re-optimization.
    pub initial_trajectory: Vec<(f64, RigidPose)>,
    /// Chained odometry deltas from the first keyframe.
    pub dead_reckoning: Vec<(f64, RigidPose)>,
    pub metrics: Vec<RingMetrics>,
    pub gates: Vec<GateRecord>,
    pub refinements: Vec<RefinementResult>,
    /// Pose each integrated frame was last rendered from.
    pub render_poses: BTreeMap<usize, RigidPose>,
    pub rings: Vec<Ring>,
    pub graph: FactorGraph,
}

impl PipelineOutput {
    /// Writes `trajectory.tum`, `dead_reckoning.tum`, `map.ply` and `metrics.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_tum(dir.join("trajectory.tum"), &self.trajectory)?;
        write_tum(dir.join("dead_reckoning.tum"), &self.dead_reckoning)?;
        self.map.write_ply(dir.join("map.ply"))?;
        write_metrics_csv(dir.join("metrics.csv"), &self.metrics)
    }

    pub fn final_metrics(&self) -> Option<&RingMetrics> {
        self.metrics.last()
    }
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[RingMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Odometry, graph and keyframe bookkeeping shared by both mapping modes.
pub struct Frontend {
    pub odometry: OdometryResult,
    /// Image index of each keyframe.
    pub frames: Vec<usize>,
    pub graph: FactorGraph,
    pub estimates: Estimates,
}

impl Frontend {
    pub fn trajectory(&self, log: &SensorLog, estimates: &Estimates) -> Vec<(f64, RigidPose)> {
        self.frames.iter().map(|&f| (log.images[f].0, estimates[&(f as VarId)])).collect()
    }

    pub fn dead_reckoning(&self) -> Result<Vec<(f64, RigidPose)>> {
        let kf = &self.odometry.keyframes;
        let mut pose = kf[0].state.pose;
        let mut out = vec![(kf[0].timestamp, pose)];
        for (k, (delta, _)) in kf[1..].iter().zip(extract_odometry_deltas(kf)?) {
            pose = pose.compose(&delta);
            out.push((k.timestamp, pose));
        }
        Ok(out)
    }
}

fn isotropic(rotation_sigma: f64, translation_sigma: f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = rotation_sigma * rotation_sigma;
        m[(i + 3, i + 3)] = translation_sigma * translation_sigma;
    }
    m
}

/// Runs odometry, builds the landmark pose graph and solves it.
pub fn build_frontend(log: &SensorLog, cfg: &PipelineConfig) -> Result<Frontend> {
    let (t0, initial) = initialize_from_landmark(log, &cfg.odometry)?;
    let odometry = run_odometry(log, &initial, t0, &cfg.odometry)?;
    let frames = odometry.keyframes.iter().map(|k| log.image_index(k.timestamp)).collect::<Result<Vec<_>>>()?;

    let mut graph = FactorGraph::new();
    graph.add_variable(LANDMARK_ID, VariableKind::LandmarkPose, log.landmark)?;
    let s = cfg.landmark_prior_sigma;
    let prior_info = isotropic(s, s).try_inverse().ok_or(Error::SingularInformation)?;
    graph.add_factor(Factor::prior(LANDMARK_ID, log.landmark, prior_info)?)?;
    for (k, &f) in odometry.keyframes.iter().zip(&frames) {
        graph.add_variable(f as VarId, VariableKind::RobotPose, k.state.pose)?;
    }
    for (w, (delta, cov)) in frames.windows(2).zip(extract_odometry_deltas(&odometry.keyframes)?) {
        let info = cov.try_inverse().ok_or(Error::SingularInformation)?;
        let info = (info + info.transpose()) * 0.5;
        graph.add_factor(Factor::odometry(w[0] as VarId, w[1] as VarId, delta, info)?.with_huber(cfg.huber_k)?)?;
    }
    let landmark_info = isotropic(cfg.landmark_sigma_rotation, cfg.landmark_sigma_translation)
        .try_inverse()
        .ok_or(Error::SingularInformation)?;
    for (t, z) in &log.landmark_obs {
        let f = log.image_index(*t)?;
        if graph.contains(f as VarId) {
            graph.add_factor(Factor::landmark(f as VarId, LANDMARK_ID, *z, landmark_info)?.with_huber(cfg.huber_k)?)?;
        }
    }
    let (estimates, report) = solve_lm(&graph, &graph.estimates(), &cfg.lm)?;
    if !report.converged {
        warn!("initial graph solve stopped after {} iterations without converging", report.iterations);
    }
    graph.set_estimates(&estimates)?;
    Ok(Frontend { odometry, frames, graph, estimates })
}

/// Loads a sensor log from `log_dir` and runs the pipeline on it.
pub fn run_pipeline(log_dir: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let (log, _) = read_log(log_dir)?;
    run_on_log(&log, cfg)
}

pub fn run_on_log(log: &SensorLog, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let frontend = build_frontend(log, cfg).map_err(|e| e.in_stage(0, "graph"))?;
    let initial_trajectory = frontend.trajectory(log, &frontend.estimates);
    let dead_reckoning = frontend.dead_reckoning()?;
    let mut mapper = Mapper::new(log, cfg, frontend);
    match cfg.mode {
        MappingMode::Incremental => mapper.run_incremental()?,
        MappingMode::Batch => mapper.run_batch()?,
    }
    let trajectory = mapper.frontend.trajectory(log, &mapper.frontend.estimates);
    Ok(PipelineOutput {
        map: mapper.map,
        trajectory,
        initial_trajectory,
        dead_reckoning,
        metrics: mapper.metrics,
        gates: mapper.gates,
        refinements: mapper.refinements,
        render_poses: mapper.render_poses,
        rings: mapper.rings,
        graph: mapper.frontend.graph,
    })
}

struct Mapper<'a> {
    log: &'a SensorLog,
    cfg: &'a PipelineConfig,
    cam: PinholeCamera,
    frontend: Frontend,
    map: SplatMap,
    trainer: MapTrainer,
    rng: ChaCha8Rng,
    render_poses: BTreeMap<usize, RigidPose>,
    /// Integrated frames in integration order.
    integrated: Vec<usize>,
    metrics: Vec<RingMetrics>,
    gates: Vec<GateRecord>,
    refinements: Vec<RefinementResult>,
    rings: Vec<Ring>,
}

impl<'a> Mapper<'a> {
    fn new(log: &'a SensorLog, cfg: &'a PipelineConfig, frontend: Frontend) -> Self {
        let weights = ReconWeights { ssim: cfg.lambda1, depth_tv: cfg.lambda2 };
        Self {
            log,
            cfg,
            cam: log.camera,
            frontend,
            map: SplatMap::new(),
            trainer: MapTrainer::new(cfg.learning_rates, cfg.density, weights, cfg.uncertainty, cfg.seed),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            render_poses: BTreeMap::new(),
            integrated: Vec::new(),
            metrics: Vec::new(),
            gates: Vec::new(),
            refinements: Vec::new(),
            rings: Vec::new(),
        }
    }

    fn keyframes(&self) -> Vec<(usize, VarId, RigidPose)> {
        self.frontend
            .frames
            .iter()
            .map(|&f| (f, f as VarId, self.frontend.estimates[&(f as VarId)]))
            .collect()
    }

    fn landmark_estimate(&self) -> RigidPose {
        self.frontend.estimates[&LANDMARK_ID]
    }

    /// Adds gaussians for the poorly covered pixels of `frame` seen from `pose`.
    fn seed_frame(&mut self, frame: usize, pose: &RigidPose, ring: usize) -> Result<usize> {
        let depth = self
            .log
            .depth_maps
            .get(frame)
            .ok_or_else(|| Error::InvalidInput(format!("missing pseudo-depth for frame {frame}")))?;
        let image = &self.log.images[frame].1;
        let (out, _) = render(&self.map, &self.cam, pose, &RenderSettings::default());
        let coverage = (!self.map.is_empty()).then_some((&out.alpha, self.cfg.fill_threshold));
        let new = backproject_frame(image, depth, pose, &self.cam, self.cfg.pixel_stride, self.cfg.init_scale, self.cfg.init_opacity, coverage)?;
        let n = new.len();
        self.map.extend(new, ring);
        self.render_poses.insert(frame, *pose);
        Ok(n)
    }

    fn train_on(&mut self, frame: usize) -> Result<f64> {
        let pose = self.render_poses[&frame];
        let image = &self.log.images[frame].1;
        self.trainer.step(&mut self.map, frame, image, &pose, &self.cam)
    }

    fn refine_frames(&self, frames: &[(usize, RigidPose)], iters: usize) -> Result<Vec<RefinementResult>> {
        frames
            .par_iter()
            .map(|&(f, pose)| refine_pose(&self.map, f, &self.log.images[f].1, &pose, &self.cam, &self.cfg.refine, self.cfg.lambda1, iters))
            .collect()
    }

    fn evaluate(&self, ring: usize, reopt: bool) -> Result<RingMetrics> {
        let scores: Vec<(f64, f64)> = self
            .integrated
            .par_iter()
            .map(|&f| {
                let (out, _) = render(&self.map, &self.cam, &self.render_poses[&f], &RenderSettings::default());
                let image = &self.log.images[f].1;
                Ok((psnr(image, &out.color)?, ssim(image, &out.color)?.0))
            })
            .collect::<Result<_>>()?;
        let n = scores.len().max(1) as f64;
        let ate_so_far = if self.log.ground_truth.is_empty() {
            f64::NAN
        } else {
            let est = self.frontend.trajectory(self.log, &self.frontend.estimates);
            evaluate_trajectory(&est, &self.log.ground_truth, self.cfg.match_tolerance, false)?.ate_rmse
        };
        Ok(RingMetrics {
            ring,
            frames: self.integrated.len(),
            psnr: scores.iter().map(|s| s.0.min(99.0)).sum::<f64>() / n,
            ssim: scores.iter().map(|s| s.1).sum::<f64>() / n,
            ate_so_far,
            gaussian_count: self.map.len(),
            reopt_triggered: reopt,
        })
    }

    fn push_metrics(&mut self, ring: usize, reopt: bool) -> Result<()> {
        let row = self.evaluate(ring, reopt)?;
        info!(
            "ring {}: {} frames, PSNR {:.2} dB, SSIM {:.3}, ATE {:.4} m, {} gaussians{}",
            row.ring,
            row.frames,
            row.psnr,
            row.ssim,
            row.ate_so_far,
            row.gaussian_count,
            if reopt { ", re-optimized" } else { "" }
        );
        self.metrics.push(row);
        Ok(())
    }

    fn run_incremental(&mut self) -> Result<()> {
        let rings = ring_partition(&self.keyframes(), &self.landmark_estimate(), self.cfg.ring_width).map_err(|e| e.in_stage(0, "partition"))?;
        let seed = rings[0].clone();
        self.seed_ring(&seed).map_err(|e| e.in_stage(0, "seed"))?;
        self.rings.push(seed.clone());
        self.push_metrics(0, false)?;

        while let Some(frontier) = self.next_frontier() {
            let k = frontier.index;
            let accepted = self.expand_frontier(&frontier).map_err(|e| e.in_stage(k, "expand"))?;
            let mut triggered = false;
            if self.cfg.reoptimize {
                let gate = self.gate(&frontier, &seed, accepted.len());
                if gate.passed && !accepted.is_empty() {
                    triggered = self.global_reoptimize(&accepted).map_err(|e| e.in_stage(k, "reoptimize"))?;
                }
                self.gates.push(gate);
            }
            self.rings.push(frontier);
            self.push_metrics(k, triggered).map_err(|e| e.in_stage(k, "metrics"))?;
        }
        if self.cfg.final_steps > 0 {
            let last = self.rings.last().map_or(0, |r| r.index);
            self.consolidate(self.cfg.final_steps).map_err(|e| e.in_stage(last, "train"))?;
            self.push_metrics(last, false)?;
        }
        Ok(())
    }

    /// Map steps on frames drawn uniformly from everything integrated so far.
    fn consolidate(&mut self, steps: usize) -> Result<()> {
        let frames = self.integrated.clone();
        for _ in 0..steps {
            let f = frames[self.rng.random_range(0..frames.len())];
            self.train_on(f)?;
        }
        Ok(())
    }

    fn seed_ring(&mut self, ring: &Ring) -> Result<()> {
        let frames: Vec<usize> = ring.frames().collect();
        for &f in &frames {
            let pose = self.frontend.estimates[&(f as VarId)];
            self.seed_frame(f, &pose, 0)?;
        }
        self.integrated.extend(&frames);
        for _ in 0..self.cfg.seed_steps {
            let f = frames[self.rng.random_range(0..frames.len())];
            self.train_on(f)?;
        }
        Ok(())
    }

    /// The innermost ring among the keyframes not yet integrated, using the
    /// current estimates.
    fn next_frontier(&self) -> Option<Ring> {
        let landmark = self.landmark_estimate();
        let w = self.cfg.ring_width;
        let pending: Vec<(usize, usize, RigidPose)> = self
            .keyframes()
            .into_iter()
            .filter(|(f, _, _)| !self.render_poses.contains_key(f))
            .map(|(f, _, p)| (f, (horizontal_distance(&p, &landmark) / w).floor() as usize, p))
            .collect();
        let index = pending.iter().map(|p| p.1).min()?;
        Some(Ring {
            index,
            r_lo: index as f64 * w,
            r_hi: (index + 1) as f64 * w,
            members: pending
                .iter()
                .filter(|p| p.1 == index)
                .map(|p| RingMember { frame: p.0, variable: p.0 as VarId })
                .collect(),
        })
    }

    /// Integrates one ring and returns the final refined poses of the frames
    /// whose refinement was accepted.
    fn expand_frontier(&mut self, ring: &Ring) -> Result<Vec<(usize, RigidPose)>> {
        if ring.is_empty() {
            return Ok(Vec::new());
        }
        let starts: Vec<(usize, RigidPose)> = ring.frames().map(|f| (f, self.frontend.estimates[&(f as VarId)])).collect();
        let results = self.refine_frames(&starts, self.cfg.refine.iters)?;
        if results.iter().all(|r| !r.attempted) {
            warn!("ring {}: no refinement attempted, seeding from graph poses", ring.index);
        }
        let mut accepted: BTreeMap<usize, RigidPose> = BTreeMap::new();
        for r in &results {
            if r.accepted {
                accepted.insert(r.frame, r.refined);
            }
            self.seed_frame(r.frame, &r.refined, ring.index)?;
        }
        self.refinements.extend(results);
        let frontier: Vec<usize> = ring.frames().collect();
        let previous = self.integrated.clone();
        self.integrated.extend(&frontier);

        for step in 1..=self.cfg.ring_steps {
            let from_frontier = previous.is_empty() || self.rng.random::<f64>() < self.cfg.frontier_fraction;
            let pool = if from_frontier { &frontier } else { &previous };
            let f = pool[self.rng.random_range(0..pool.len())];
            self.train_on(f)?;
            if self.cfg.rerefine_every > 0 && step % self.cfg.rerefine_every == 0 && step < self.cfg.ring_steps {
                let current: Vec<(usize, RigidPose)> = frontier.iter().map(|&f| (f, self.render_poses[&f])).collect();
                for r in self.refine_frames(&current, self.cfg.rerefine_iters)? {
                    if r.accepted {
                        accepted.insert(r.frame, r.refined);
                        self.render_poses.insert(r.frame, r.refined);
                    }
                }
            }
        }
        Ok(accepted.into_iter().collect())
    }

    fn gate(&self, frontier: &Ring, seed: &Ring, accepted: usize) -> GateRecord {
        let mut ids = seed.variables();
        let n_seed = ids.len();
        ids.extend(frontier.variables());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let (frontier_trace, seed_trace, passed) = match marginal_traces(&self.frontend.graph, &self.frontend.estimates, &ids) {
            Some(t) => (mean(&t[n_seed..]), mean(&t[..n_seed]), gate_decision(&t[n_seed..], &t[..n_seed], self.cfg.gate_factor)),
            None => (f64::NAN, f64::NAN, false),
        };
        info!("ring {}: frontier trace {:.3e}, seed trace {:.3e}, gate {}", frontier.index, frontier_trace, seed_trace, if passed { "passed" } else { "failed" });
        GateRecord {
            ring: frontier.index,
            frontier_trace,
            seed_trace,
            passed,
            accepted_refinements: accepted,
        }
    }

    /// Adds external factors for `accepted` and re-solves. Returns whether
    /// the new estimates were adopted.
    fn global_reoptimize(&mut self, accepted: &[(usize, RigidPose)]) -> Result<bool> {
        if accepted.is_empty() {
            return Ok(false);
        }
        let cov = isotropic(self.cfg.sigma_ext_rotation, self.cfg.sigma_ext_translation);
        let mut graph = self.frontend.graph.clone();
        let factors: Vec<(VarId, RigidPose, Matrix6<f64>)> = accepted.iter().map(|&(f, p)| (f as VarId, p, cov)).collect();
        add_external_pose_factors(&mut graph, &factors)?;
        let (estimates, report) = solve_lm(&graph, &self.frontend.estimates, &self.cfg.lm)?;
        if !report.converged {
            warn!("re-optimization did not converge after {} iterations; keeping previous estimates", report.iterations);
            return Ok(false);
        }
        graph.set_estimates(&estimates)?;
        self.frontend.graph = graph;
        self.frontend.estimates = estimates;
        for f in &self.integrated {
            self.render_poses.insert(*f, self.frontend.estimates[&(*f as VarId)]);
        }
        Ok(true)
    }

    fn run_batch(&mut self) -> Result<()> {
        let rings = ring_partition(&self.keyframes(), &self.landmark_estimate(), self.cfg.ring_width).map_err(|e| e.in_stage(0, "partition"))?;
        let last = rings.last().map_or(0, |r| r.index);
        let frames: Vec<usize> = self.frontend.frames.clone();
        for &f in &frames {
            let pose = self.frontend.estimates[&(f as VarId)];
            self.seed_frame(f, &pose, 0).map_err(|e| e.in_stage(0, "seed"))?;
        }
        self.integrated = frames;
        let steps = self.cfg.seed_steps + self.cfg.ring_steps * rings.len().saturating_sub(1) + self.cfg.final_steps;
        self.consolidate(steps).map_err(|e| e.in_stage(last, "train"))?;
        self.rings = rings;
        self.push_metrics(last, false)
    }
}
