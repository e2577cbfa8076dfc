//! Control loop: grounding schedule, mapping, replanning and playback.

use std::io::{self, Write};
use std::sync::Arc;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::planner::{InitKind, PlanStart, Planner};
use super::{lift_target, lift_with_range};
use crate::bspline::BSplineTrajectory;
use crate::geometry::{Frame, Point3, Vec3};
use crate::grounding::{Grounder, GroundingConfig, GroundingQuery, GroundingStatus, MockGrounder};
use crate::mapping::{MapConfig, MapError, OccupancyMap, PointCloud};
use crate::optimizer::IterationRecord;
use crate::simulator::scenario::VEHICLE_RADIUS;
use crate::simulator::{advance, render_depth, render_view, sample_lidar, Scenario, TargetMarker, UavState, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigatorConfig {
    pub planner: Planner,
    pub grounding: GroundingConfig,
    pub map: MapConfig,
    /// Control tick (s).
    pub tick: f64,
    /// Interval between lidar scans and map updates (s).
    pub lidar_period: f64,
    pub lidar_azimuth: usize,
    pub lidar_elevation: usize,
    pub lidar_range: f64,
    pub camera_range: f64,
    /// Range-proportional depth noise: σ = η·d.
    pub depth_noise: f64,
    /// Radius of the camera-visible disc drawn at the goal (m).
    pub target_radius: f64,
    /// Distance to the goal estimate that ends the episode once playback
    /// is finished (m).
    pub arrival_radius: f64,
    pub time_limit: f64,
    pub grounding_timeout: f64,
    /// When false the goal is grounded once and never refreshed.
    pub regrounding: bool,
    /// When false lifting assumes `fixed_range` instead of reading depth.
    pub use_depth: bool,
    pub fixed_range: f64,
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        Self {
            planner: Planner::default(),
            grounding: GroundingConfig {
                pixel_noise_sigma: 3.0,
                ..GroundingConfig::default()
            },
            map: MapConfig::default(),
            tick: 0.02,
            lidar_period: 0.1,
            lidar_azimuth: 180,
            lidar_elevation: 90,
            lidar_range: 20.0,
            camera_range: 20.0,
            depth_noise: 0.02,
            target_radius: 0.75,
            arrival_radius: 1.0,
            time_limit: 120.0,
            grounding_timeout: 10.0,
            regrounding: true,
            use_depth: true,
            fixed_range: 10.0,
        }
    }
}

impl NavigatorConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.grounding.validate()?;
        self.map.validate().map_err(|e| e.to_string())?;
        self.planner.weights.validate().map_err(|e| e.to_string())?;
        self.planner.options.validate().map_err(|e| e.to_string())?;
        let positive = [
            ("tick", self.tick),
            ("lidar_period", self.lidar_period),
            ("lidar_range", self.lidar_range),
            ("camera_range", self.camera_range),
            ("arrival_radius", self.arrival_radius),
            ("time_limit", self.time_limit),
            ("grounding_timeout", self.grounding_timeout),
            ("fixed_range", self.fixed_range),
            ("knot_interval", self.planner.config.knot_interval),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.depth_noise >= 0.0) {
            return Err("depth_noise must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Collision,
    GroundingFailed,
    Timeout,
    /// Arrived at the estimate but outside the success threshold.
    MissedGoal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Succeeded,
    Failed(FailureReason),
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Succeeded => "succeeded",
            Status::Failed(FailureReason::Collision) => "collision",
            Status::Failed(FailureReason::GroundingFailed) => "grounding_failed",
            Status::Failed(FailureReason::Timeout) => "timeout",
            Status::Failed(FailureReason::MissedGoal) => "missed_goal",
        }
    }
}

/// Everything one episode needs besides the mutable navigator state.
pub struct EpisodeContext<'a> {
    pub scenario: &'a Scenario,
    pub config: &'a NavigatorConfig,
    /// Episode seed; drives grounding and depth noise.
    pub seed: u64,
    /// Scenario world plus the goal marker, as the camera sees it.
    pub camera_world: World,
}

impl<'a> EpisodeContext<'a> {
    pub fn new(scenario: &'a Scenario, config: &'a NavigatorConfig, seed: u64) -> Self {
        let camera_world = scenario.world.clone().with_target(TargetMarker {
            center: scenario.goal.coords,
            radius: config.target_radius,
        });
        Self {
            scenario,
            config,
            seed,
            camera_world,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NavigatorState {
    /// Persistent goal estimate G_world.
    pub goal: Option<Point3>,
    pub trajectory: Option<BSplineTrajectory>,
    pub last_grounding: Option<f64>,
    pub time: f64,
    pub map: OccupancyMap,
    pub status: Status,
    pub vehicle: UavState,
    pub groundings: u64,
    pub replans: u64,
    pub collided: bool,
    /// Cost of the most recent optimizer result.
    pub last_cost: Option<f64>,
    next_lidar: f64,
    last_forced_replan: f64,
}

impl NavigatorState {
    pub fn new(scenario: &Scenario, config: &NavigatorConfig) -> Result<Self, MapError> {
        let map = OccupancyMap::new(config.map, &scenario.start.position())?;
        Ok(Self {
            goal: None,
            trajectory: None,
            last_grounding: None,
            time: scenario.start.time,
            map,
            status: Status::Running,
            vehicle: scenario.start,
            groundings: 0,
            replans: 0,
            collided: false,
            last_cost: None,
            next_lidar: scenario.start.time,
            last_forced_replan: f64::NEG_INFINITY,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: f64,
    pub position: [f64; 3],
    pub goal: Option<[f64; 3]>,
    pub cost: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone)]
pub struct PlanRecord {
    pub time: f64,
    pub trajectory: BSplineTrajectory,
    pub init: InitKind,
    /// Optimizer traces, one per run in the cycle.
    pub traces: Vec<Vec<IterationRecord>>,
    pub clearance: f64,
    pub time_scale: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub ticks: Vec<TickRecord>,
    pub plans: Vec<PlanRecord>,
}

impl EpisodeLog {
    /// Writes the per-tick trace as CSV.
    pub fn write_ticks_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,x,y,z,goal_x,goal_y,goal_z,J,status")?;
        for t in &self.ticks {
            let g = t
                .goal
                .map(|g| format!("{},{},{}", g[0], g[1], g[2]))
                .unwrap_or_else(|| ",,".into());
            let j = t.cost.map(|c| c.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.time,
                t.position[0],
                t.position[1],
                t.position[2],
                g,
                j,
                t.status.label()
            )?;
        }
        Ok(())
    }

    /// Flown positions, one per tick.
    /// Optimizer traces of every planning cycle, one row per iteration.
    pub fn write_plans_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "plan,time,run,iteration,J,Js,Jc,Jd,step")?;
        for (k, plan) in self.plans.iter().enumerate() {
            for (run, trace) in plan.traces.iter().enumerate() {
                for r in trace {
                    writeln!(
                        out,
                        "{k},{},{run},{},{},{},{},{},{}",
                        plan.time, r.iteration, r.total, r.smoothness, r.collision, r.feasibility, r.step
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn path(&self) -> Vec<Vec3> {
        self.ticks.iter().map(|t| Vec3::from(t.position)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Final distance to the true goal (m).
    pub ne: f64,
    /// Simulated flight time plus modeled grounding latency (s).
    pub time: f64,
    pub flight_time: f64,
    pub collided: bool,
    pub groundings: u64,
    pub replans: u64,
    pub status: Status,
}

fn ground(nav: &mut NavigatorState, ctx: &EpisodeContext, grounder: &mut dyn Grounder) {
    let sc = ctx.scenario;
    let cfg = ctx.config;
    let camera_pose = nav.vehicle.pose.compose(&sc.camera_extrinsics);
    let image = grounder
        .needs_image()
        .then(|| render_view(&ctx.camera_world, &camera_pose, &sc.camera, cfg.camera_range));
    let query = GroundingQuery {
        image,
        instruction: sc.instruction.clone(),
        intrinsics: sc.camera,
        camera_pose,
        index: nav.groundings,
    };
    let index = nav.groundings;
    nav.groundings += 1;
    nav.last_grounding = Some(nav.time);
    let result = match grounder.ground(&query) {
        Ok(r) => r,
        Err(e) => {
            debug!("grounding {index} failed: {e}");
            return;
        }
    };
    let Some(pixel) = result.pixel.filter(|_| result.status == GroundingStatus::Found) else {
        return;
    };
    let lifted = if cfg.use_depth {
        let mut depth = render_depth(&ctx.camera_world, &camera_pose, &sc.camera, cfg.camera_range);
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        rng.set_stream((1 << 40) + index);
        depth.apply_noise(cfg.depth_noise, &mut rng);
        lift_target(&pixel, &depth, &sc.camera, &sc.camera_extrinsics, &nav.vehicle.pose)
    } else {
        lift_with_range(&pixel, cfg.fixed_range, &sc.camera, &sc.camera_extrinsics, &nav.vehicle.pose)
    };
    match lifted {
        Ok(g) => nav.goal = Some(g),
        Err(e) => debug!("lifting grounding {index} failed: {e}"),
    }
}

fn update_map(nav: &mut NavigatorState, ctx: &EpisodeContext) -> bool {
    let cfg = ctx.config;
    let lidar_pose = nav.vehicle.pose.compose(&ctx.scenario.lidar_extrinsics);
    let scan = sample_lidar(&ctx.scenario.world, &lidar_pose, cfg.lidar_azimuth, cfg.lidar_elevation, cfg.lidar_range);
    let world_points = scan.points.iter().map(|p| lidar_pose.transform_point(p)).collect();
    let moved = nav.map.slide_window(&nav.vehicle.position());
    let inserted = nav.map.insert_cloud(&PointCloud::new(world_points, Frame::World));
    if nav.map.is_stale() {
        nav.map.recompute_distance_field();
    }
    moved || inserted > 0
}

fn replan(nav: &mut NavigatorState, ctx: &EpisodeContext, goal: &Vec3, log: Option<&mut EpisodeLog>) {
    let start = match &nav.trajectory {
        Some(t) => PlanStart::from_trajectory(t, nav.time).unwrap_or(PlanStart::at_rest(nav.time, nav.vehicle.position())),
        None => PlanStart::at_rest(nav.time, nav.vehicle.position()),
    };
    match ctx.config.planner.plan(&nav.map, &start, goal, nav.trajectory.as_ref()) {
        Ok(out) => {
            nav.replans += 1;
            nav.last_cost = out.runs.last().map(|r| r.report.total);
            if let Some(log) = log {
                log.plans.push(PlanRecord {
                    time: nav.time,
                    trajectory: out.trajectory.clone(),
                    init: out.init,
                    traces: out.runs.iter().map(|r| r.trace.clone()).collect(),
                    clearance: out.clearance,
                    time_scale: out.time_scale,
                });
            }
            nav.trajectory = Some(out.trajectory);
        }
        Err(e) => debug!("replanning at t={} failed: {e}", nav.time),
    }
}

/// One control tick: grounding when due, lidar mapping, replanning on a
/// map or goal change, playback by one tick, then status transitions.
pub fn navigator_step(
    nav: &mut NavigatorState,
    ctx: &EpisodeContext,
    grounder: &mut dyn Grounder,
    mut log: Option<&mut EpisodeLog>,
) {
    if nav.status != Status::Running {
        return;
    }
    let cfg = ctx.config;

    let due = match (nav.goal, nav.last_grounding) {
        (None, _) => true,
        (Some(_), Some(last)) => cfg.regrounding && nav.time - last >= cfg.grounding.period - 1e-9,
        (Some(_), None) => false,
    };
    let previous_goal = nav.goal;
    if due {
        ground(nav, ctx, grounder);
    }
    let goal_changed = nav.goal.map(|g| g.coords) != previous_goal.map(|g| g.coords);

    let mut map_changed = false;
    if nav.time >= nav.next_lidar - 1e-9 {
        map_changed = update_map(nav, ctx);
        nav.next_lidar += cfg.lidar_period;
    }

    if let Some(goal) = nav.goal.map(|g| g.coords) {
        let finished = nav.trajectory.as_ref().is_none_or(|t| nav.time >= t.end_time());
        let stranded = finished && (nav.vehicle.position() - goal).norm() >= cfg.arrival_radius;
        let force = nav.trajectory.is_none() || (stranded && nav.time - nav.last_forced_replan >= 0.5);
        if map_changed || goal_changed || force {
            if stranded {
                nav.last_forced_replan = nav.time;
            }
            replan(nav, ctx, &goal, log.as_deref_mut());
        }
    }

    match &nav.trajectory {
        Some(t) => match advance(&nav.vehicle, t, cfg.tick, cfg.planner.weights.v_max) {
            Ok(s) => nav.vehicle = s,
            Err(_) => nav.vehicle.time += cfg.tick,
        },
        None => nav.vehicle.time += cfg.tick,
    }
    nav.time += cfg.tick;

    let position = nav.vehicle.position();
    let sc = ctx.scenario;
    if sc.world.check_collision(&Point3::world(position), VEHICLE_RADIUS) {
        nav.collided = true;
        nav.status = Status::Failed(FailureReason::Collision);
    } else if let (Some(goal), Some(traj)) = (nav.goal, &nav.trajectory) {
        if nav.time >= traj.end_time() && (position - goal.coords).norm() < cfg.arrival_radius {
            nav.status = if (position - sc.goal.coords).norm() < sc.delta {
                Status::Succeeded
            } else {
                Status::Failed(FailureReason::MissedGoal)
            };
        }
    }
    if nav.status == Status::Running {
        if nav.goal.is_none() && nav.time - sc.start.time >= cfg.grounding_timeout - 1e-9 {
            nav.status = Status::Failed(FailureReason::GroundingFailed);
        } else if nav.time - sc.start.time >= cfg.time_limit - 1e-9 {
            nav.status = Status::Failed(FailureReason::Timeout);
        }
    }

    if let Some(log) = log {
        log.ticks.push(TickRecord {
            time: nav.time,
            position: position.into(),
            goal: nav.goal.map(|g| g.coords.into()),
            cost: nav.last_cost,
            status: nav.status,
        });
    }
}

fn finish(nav: &NavigatorState, ctx: &EpisodeContext) -> EpisodeResult {
    let sc = ctx.scenario;
    let ne = (nav.vehicle.position() - sc.goal.coords).norm();
    let flight_time = nav.time - sc.start.time;
    EpisodeResult {
        success: ne < sc.delta && !nav.collided,
        ne,
        time: flight_time + ctx.config.grounding.latency_model * nav.groundings as f64,
        flight_time,
        collided: nav.collided,
        groundings: nav.groundings,
        replans: nav.replans,
        status: nav.status,
    }
}

fn run(
    scenario: &Scenario,
    config: &NavigatorConfig,
    seed: u64,
    grounder: &mut dyn Grounder,
    mut log: Option<&mut EpisodeLog>,
) -> Result<EpisodeResult, String> {
    config.validate()?;
    scenario.validate().map_err(|e| e.to_string())?;
    let ctx = EpisodeContext::new(scenario, config, seed);
    let mut nav = NavigatorState::new(scenario, config).map_err(|e| e.to_string())?;
    while nav.status == Status::Running {
        navigator_step(&mut nav, &ctx, grounder, log.as_deref_mut());
    }
    Ok(finish(&nav, &ctx))
}

/// The default oracle grounder for a scenario and seed.
pub fn mock_grounder(scenario: &Scenario, config: &NavigatorConfig, seed: u64) -> MockGrounder {
    MockGrounder::new(
        Arc::new(scenario.world.clone()),
        scenario.goal.coords,
        config.grounding.pixel_noise_sigma,
        seed,
    )
    .with_latency(config.grounding.latency_model)
}

/// Runs one episode at the configured tick until a terminal status.
pub fn run_episode(
    scenario: &Scenario,
    config: &NavigatorConfig,
    seed: u64,
    grounder: &mut dyn Grounder,
) -> Result<EpisodeResult, String> {
    run(scenario, config, seed, grounder, None)
}

/// [`run_episode`] that also records every tick and planning cycle.
pub fn run_episode_logged(
    scenario: &Scenario,
    config: &NavigatorConfig,
    seed: u64,
    grounder: &mut dyn Grounder,
) -> Result<(EpisodeResult, EpisodeLog), String> {
    let mut log = EpisodeLog::default();
    let result = run(scenario, config, seed, grounder, Some(&mut log))?;
    Ok((result, log))
}
