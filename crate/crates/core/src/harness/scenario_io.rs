//! Scenario JSON documents.
//!
//! ```json
//! {
//!   "world": {
//!     "bounds": [[0, 0, 0], [20, 20, 20]],
//!     "obstacles": [
//!       {"type": "box", "center": [5, 5, 5], "size": [1, 2, 3]},
//!       {"type": "sphere", "center": [8, 8, 8], "radius": 1.5}
//!     ]
//!   },
//!   "start": {"position": [1, 1, 1], "yaw": 0.0},
//!   "goal": [18, 18, 18],
//!   "instruction": "fly to the red beacon",
//!   "delta": 5.0,
//!   "camera": {"fx": 320, "fy": 320, "cx": 320, "cy": 240, "width": 640, "height": 480},
//!   "seed": 7
//! }
//! ```
//!
//! Lengths are meters and angles radians. `camera.extrinsics` and
//! `lidar.extrinsics` (`{"rotation": 3×3 rows, "translation": [x, y, z]}`)
//! are optional and default to the standard rig. `camera` itself is
//! optional and defaults to 640×480 with a 320 px focal length.

use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use serde_json::{json, Map, Value};

use super::HarnessError;
use crate::geometry::{CameraIntrinsics, Point3, Pose, Vec3};
use crate::simulator::scenario::{default_camera_extrinsics, VEHICLE_RADIUS};
use crate::simulator::{Aabb, Obstacle, Scenario, UavState, World};

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, HarnessError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| HarnessError::schema("", e.to_string()))?;
    scenario_from_json(&doc)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&scenario_to_json(scenario)).expect("finite values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn scenario_to_json(s: &Scenario) -> Value {
    let obstacles: Vec<Value> = s
        .world
        .obstacles()
        .iter()
        .map(|o| match *o {
            Obstacle::Box { center, size } => json!({"type": "box", "center": vec3(&center), "size": vec3(&size)}),
            Obstacle::Sphere { center, radius } => {
                json!({"type": "sphere", "center": vec3(&center), "radius": radius})
            }
        })
        .collect();
    let b = s.world.bounds();
    json!({
        "world": {"bounds": [vec3(&b.min), vec3(&b.max)], "obstacles": obstacles},
        "start": {"position": vec3(&s.start.position()), "yaw": s.start.pose.yaw()},
        "goal": vec3(&s.goal.coords),
        "instruction": s.instruction,
        "delta": s.delta,
        "camera": {
            "fx": s.camera.fx,
            "fy": s.camera.fy,
            "cx": s.camera.cx,
            "cy": s.camera.cy,
            "width": s.camera.width,
            "height": s.camera.height,
            "extrinsics": pose(&s.camera_extrinsics),
        },
        "lidar": {"extrinsics": pose(&s.lidar_extrinsics)},
        "seed": s.seed,
    })
}

pub fn scenario_from_json(doc: &Value) -> Result<Scenario, HarnessError> {
    let root = object(doc, "")?;
    let world_doc = object(field(root, "", "world")?, "world")?;
    let bounds = read_bounds(field(world_doc, "world", "bounds")?, "world.bounds")?;
    let obstacles = match world_doc.get("obstacles") {
        None => Vec::new(),
        Some(v) => array(v, "world.obstacles")?
            .iter()
            .enumerate()
            .map(|(i, o)| read_obstacle(o, &format!("world.obstacles[{i}]")))
            .collect::<Result<_, _>>()?,
    };
    for (i, o) in obstacles.iter().enumerate() {
        o.validate()
            .map_err(|e| HarnessError::schema(format!("world.obstacles[{i}]"), e.to_string()))?;
        if !bounds.contains_box(&o.bounding_box()) {
            return Err(HarnessError::schema(format!("world.obstacles[{i}]"), "outside world bounds"));
        }
    }
    let world = World::new(bounds, obstacles).map_err(|e| HarnessError::schema("world", e.to_string()))?;

    let start_doc = object(field(root, "", "start")?, "start")?;
    let position = read_vec3(field(start_doc, "start", "position")?, "start.position")?;
    let yaw = match start_doc.get("yaw") {
        None => 0.0,
        Some(v) => number(v, "start.yaw")?,
    };
    if !bounds.contains(&position) {
        return Err(HarnessError::schema("start.position", "outside world bounds"));
    }
    if world.check_collision(&Point3::world(position), VEHICLE_RADIUS) {
        return Err(HarnessError::schema("start.position", "in collision"));
    }

    let goal = read_vec3(field(root, "", "goal")?, "goal")?;
    if !bounds.contains(&goal) {
        return Err(HarnessError::schema("goal", "outside world bounds"));
    }
    let instruction = match field(root, "", "instruction")? {
        Value::String(s) if !s.trim().is_empty() => s.clone(),
        _ => return Err(HarnessError::schema("instruction", "expected a non-empty string")),
    };
    let delta = number(field(root, "", "delta")?, "delta")?;
    if !(delta > 0.0) {
        return Err(HarnessError::schema("delta", "must be positive"));
    }
    let seed = match root.get("seed") {
        None => 0,
        Some(v) => v.as_u64().ok_or_else(|| HarnessError::schema("seed", "expected a non-negative integer"))?,
    };

    let mut scenario = Scenario::new(world, UavState::at_rest(position, yaw), goal, instruction, delta, seed);
    if let Some(cam) = root.get("camera") {
        let cam = object(cam, "camera")?;
        let d = CameraIntrinsics::default();
        let num = |key: &str, default: f64| -> Result<f64, HarnessError> {
            cam.get(key).map_or(Ok(default), |v| number(v, &format!("camera.{key}")))
        };
        let dim = |key: &str, default: u32| -> Result<u32, HarnessError> {
            cam.get(key).map_or(Ok(default), |v| {
                v.as_u64()
                    .and_then(|n| u32::try_from(n).ok())
                    .ok_or_else(|| HarnessError::schema(format!("camera.{key}"), "expected a positive integer"))
            })
        };
        scenario.camera = CameraIntrinsics::new(
            num("fx", d.fx)?,
            num("fy", d.fy)?,
            num("cx", d.cx)?,
            num("cy", d.cy)?,
            dim("width", d.width)?,
            dim("height", d.height)?,
        )
        .map_err(|e| HarnessError::schema("camera", e.to_string()))?;
        scenario.camera_extrinsics = match cam.get("extrinsics") {
            None => default_camera_extrinsics(),
            Some(v) => read_pose(v, "camera.extrinsics")?,
        };
    }
    if let Some(lidar) = root.get("lidar") {
        let lidar = object(lidar, "lidar")?;
        if let Some(v) = lidar.get("extrinsics") {
            scenario.lidar_extrinsics = read_pose(v, "lidar.extrinsics")?;
        }
    }
    Ok(scenario)
}

fn vec3(v: &Vec3) -> Value {
    json!([v.x, v.y, v.z])
}

fn pose(p: &Pose) -> Value {
    let r = p.rotation();
    let rows: Vec<Value> = (0..3).map(|i| json!([r[(i, 0)], r[(i, 1)], r[(i, 2)]])).collect();
    json!({"rotation": rows, "translation": vec3(p.translation())})
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, HarnessError> {
    obj.get(key).ok_or_else(|| HarnessError::schema(join(path, key), "missing"))
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, HarnessError> {
    v.as_object().ok_or_else(|| HarnessError::schema(path, "expected an object"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, HarnessError> {
    v.as_array().ok_or_else(|| HarnessError::schema(path, "expected an array"))
}

fn number(v: &Value, path: &str) -> Result<f64, HarnessError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| HarnessError::schema(path, "expected a finite number"))
}

fn read_vec3(v: &Value, path: &str) -> Result<Vec3, HarnessError> {
    let items = array(v, path)?;
    if items.len() != 3 {
        return Err(HarnessError::schema(path, "expected 3 numbers"));
    }
    Ok(Vec3::new(
        number(&items[0], &format!("{path}[0]"))?,
        number(&items[1], &format!("{path}[1]"))?,
        number(&items[2], &format!("{path}[2]"))?,
    ))
}

fn read_bounds(v: &Value, path: &str) -> Result<Aabb, HarnessError> {
    let items = array(v, path)?;
    if items.len() != 2 {
        return Err(HarnessError::schema(path, "expected [min, max]"));
    }
    let min = read_vec3(&items[0], &format!("{path}[0]"))?;
    let max = read_vec3(&items[1], &format!("{path}[1]"))?;
    Aabb::new(min, max).map_err(|e| HarnessError::schema(path, e.to_string()))
}

fn read_obstacle(v: &Value, path: &str) -> Result<Obstacle, HarnessError> {
    let obj = object(v, path)?;
    let center = read_vec3(field(obj, path, "center")?, &join(path, "center"))?;
    match field(obj, path, "type")?.as_str() {
        Some("box") => Ok(Obstacle::Box {
            center,
            size: read_vec3(field(obj, path, "size")?, &join(path, "size"))?,
        }),
        Some("sphere") => Ok(Obstacle::Sphere {
            center,
            radius: number(field(obj, path, "radius")?, &join(path, "radius"))?,
        }),
        _ => Err(HarnessError::schema(join(path, "type"), "expected \"box\" or \"sphere\"")),
    }
}

fn read_pose(v: &Value, path: &str) -> Result<Pose, HarnessError> {
    let obj = object(v, path)?;
    let rows_path = join(path, "rotation");
    let rows = array(field(obj, path, "rotation")?, &rows_path)?;
    if rows.len() != 3 {
        return Err(HarnessError::schema(rows_path, "expected 3 rows"));
    }
    let mut r = Matrix3::zeros();
    for (i, row) in rows.iter().enumerate() {
        let row = read_vec3(row, &format!("{rows_path}[{i}]"))?;
        for j in 0..3 {
            r[(i, j)] = row[j];
        }
    }
    let t = read_vec3(field(obj, path, "translation")?, &join(path, "translation"))?;
    Pose::new(r, t).map_err(|e| HarnessError::schema(rows_path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{gen_random_scenario, ScenarioParams};

    fn minimal() -> Value {
        json!({
            "world": {"bounds": [[0, 0, 0], [20, 20, 20]], "obstacles": []},
            "start": {"position": [2, 10, 10], "yaw": 0.0},
            "goal": [15, 10, 10],
            "instruction": "fly to the red beacon",
            "delta": 5.0,
            "seed": 1
        })
    }

    fn field_of(err: HarnessError) -> String {
        match err {
            HarnessError::Schema { field, .. } => field,
            other => panic!("expected a schema error, got {other}"),
        }
    }

    #[test]
    fn minimal_document_loads() {
        let s = scenario_from_json(&minimal()).unwrap();
        assert_eq!(s.goal.coords, Vec3::new(15.0, 10.0, 10.0));
        assert_eq!(s.camera, CameraIntrinsics::default());
        assert_eq!(s.camera_extrinsics, default_camera_extrinsics());
        assert_eq!(s.seed, 1);
    }

    #[test]
    fn missing_goal_names_the_field() {
        let mut doc = minimal();
        doc.as_object_mut().unwrap().remove("goal");
        assert_eq!(field_of(scenario_from_json(&doc).unwrap_err()), "goal");
    }

    #[test]
    fn nested_errors_carry_paths() {
        let mut doc = minimal();
        doc["world"]["obstacles"] = json!([{"type": "sphere", "center": [5, 5, 5], "radius": 1},
                                           {"type": "sphere", "center": [5, 5, "x"], "radius": 1}]);
        assert_eq!(field_of(scenario_from_json(&doc).unwrap_err()), "world.obstacles[1].center[2]");

        let mut doc = minimal();
        doc["world"]["obstacles"] = json!([{"type": "cone", "center": [5, 5, 5]}]);
        assert_eq!(field_of(scenario_from_json(&doc).unwrap_err()), "world.obstacles[0].type");
    }

    #[test]
    fn out_of_bounds_geometry_is_rejected() {
        let mut doc = minimal();
        doc["world"]["obstacles"] = json!([{"type": "box", "center": [19.5, 5, 5], "size": [2, 2, 2]}]);
        assert_eq!(field_of(scenario_from_json(&doc).unwrap_err()), "world.obstacles[0]");

        let mut doc = minimal();
        doc["goal"] = json!([25, 10, 10]);
        assert_eq!(field_of(scenario_from_json(&doc).unwrap_err()), "goal");

        let mut doc = minimal();
        doc["world"]["obstacles"] = json!([{"type": "sphere", "center": [2, 10, 10], "radius": 1}]);
        assert_eq!(field_of(scenario_from_json(&doc).unwrap_err()), "start.position");
    }

    #[test]
    fn generated_scenarios_round_trip() {
        for seed in 0..5 {
            let s = gen_random_scenario(seed, &ScenarioParams::default()).unwrap();
            let doc = scenario_to_json(&s);
            let back = scenario_from_json(&doc).unwrap();
            assert_eq!(back.world, s.world);
            assert_eq!(back.goal, s.goal);
            assert_eq!(back.camera, s.camera);
            assert_eq!(back.camera_extrinsics, s.camera_extrinsics);
            assert_eq!(back.lidar_extrinsics, s.lidar_extrinsics);
            assert_eq!((back.instruction.as_str(), back.delta, back.seed), (s.instruction.as_str(), s.delta, s.seed));
            assert_eq!(back.start.position(), s.start.position());
            let dr = back.start.pose.rotation() - s.start.pose.rotation();
            assert!(dr.amax() < 1e-12);
            assert_eq!(scenario_to_json(&back).to_string(), doc.to_string());
        }
    }
}
