//! Prompt template and tolerant response extraction.

use serde::Deserialize;

use super::{GroundingError, GroundingResult};
use crate::geometry::PixelTarget;

/// Deterministic grounding prompt embedding `instruction` verbatim.
pub fn build_prompt(instruction: &str, width: u32, height: u32) -> Result<String, GroundingError> {
    if instruction.trim().is_empty() {
        return Err(GroundingError::EmptyInstruction);
    }
    Ok(format!(
        "You are guiding a drone. The attached image is the drone's forward camera view, \
{width} pixels wide and {height} pixels tall, with the origin at the top-left corner, \
x increasing to the right and y increasing downward.\n\
Navigation instruction: \"{instruction}\"\n\
Analyze the whole scene and locate the destination described by the instruction. \
If it is visible, return its pixel coordinates. If it is not visible in this image, say so; \
do not guess.\n\
Respond with a single JSON object and nothing else, using exactly one of these forms:\n\
{{\"found\": true, \"x\": <number in [0, {width}]>, \"y\": <number in [0, {height}]>}}\n\
{{\"found\": false}}"
    ))
}

#[derive(Deserialize)]
struct Reply {
    found: bool,
    #[serde(default)]
    x: Option<f64>,
    #[serde(default)]
    y: Option<f64>,
}

/// Candidate `{...}` spans with balanced braces, skipping braces inside
/// string literals.
fn object_spans(raw: &str) -> impl Iterator<Item = &str> {
    let bytes = raw.as_bytes();
    (0..bytes.len()).filter(|&i| bytes[i] == b'{').filter_map(move |start| {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (off, &b) in bytes[start..].iter().enumerate() {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&raw[start..=start + off]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

/// Extracts the first well-formed response object from `raw`, tolerating
/// surrounding prose and code fences.
pub fn parse_response(raw: &str, width: u32, height: u32) -> Result<GroundingResult, GroundingError> {
    for span in object_spans(raw) {
        let Ok(reply) = serde_json::from_str::<Reply>(span) else {
            continue;
        };
        if !reply.found {
            return Ok(GroundingResult::absent());
        }
        let (Some(x), Some(y)) = (reply.x, reply.y) else {
            continue;
        };
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        if !(0.0..=width as f64).contains(&x) || !(0.0..=height as f64).contains(&y) {
            return Err(GroundingError::OutOfBounds { x, y, width, height });
        }
        return Ok(GroundingResult::found(PixelTarget::new(x, y)));
    }
    let preview: String = raw.chars().take(80).collect();
    Err(GroundingError::ParseError(preview))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::GroundingStatus;

    #[test]
    fn prompt_contract() {
        let p = build_prompt("fly to the blue tent", 640, 480).unwrap();
        assert!(p.contains("fly to the blue tent"));
        assert!(p.contains("640") && p.contains("480"));
        assert!(p.contains("\"found\": false"));
        assert_eq!(p, build_prompt("fly to the blue tent", 640, 480).unwrap());
        assert_eq!(build_prompt("", 640, 480), Err(GroundingError::EmptyInstruction));
        assert_eq!(build_prompt("  \n", 640, 480), Err(GroundingError::EmptyInstruction));
    }

    #[test]
    fn parse_examples() {
        let r = parse_response(r#"{"found": true, "x": 320, "y": 240}"#, 640, 480).unwrap();
        assert_eq!(r.pixel, Some(PixelTarget::new(320.0, 240.0)));
        assert_eq!(parse_response(r#"{"found": false}"#, 640, 480).unwrap().status, GroundingStatus::Absent);
        assert!(matches!(
            parse_response(r#"{"found": true, "x": 900, "y": 10}"#, 640, 480),
            Err(GroundingError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn tolerates_wrapping() {
        let raw = "Sure! The tent {is} here:\n```json\n{\"found\": true, \"x\": 12.5, \"y\": 3}\n```\nDone.";
        let r = parse_response(raw, 640, 480).unwrap();
        assert_eq!(r.pixel, Some(PixelTarget::new(12.5, 3.0)));
        let nested = r#"{"answer": {"found": true, "x": 1, "y": 2}}"#;
        assert_eq!(parse_response(nested, 10, 10).unwrap().pixel, Some(PixelTarget::new(1.0, 2.0)));
        let brace_in_string = r#"{"note": "}{", "found": false}"#;
        assert_eq!(parse_response(brace_in_string, 10, 10).unwrap().status, GroundingStatus::Absent);
    }

    #[test]
    fn rejects_garbage() {
        for raw in ["", "no json here", "{", "{\"found\": true}", "{\"found\": \"yes\"}", "}{"] {
            assert!(matches!(parse_response(raw, 640, 480), Err(GroundingError::ParseError(_))), "{raw}");
        }
    }

    proptest::proptest! {
        #[test]
        fn parse_is_total(raw in ".{0,200}") {
            let _ = parse_response(&raw, 640, 480);
        }

        #[test]
        fn in_bounds_round_trip(x in 0.0f64..=640.0, y in 0.0f64..=480.0) {
            let raw = format!("{{\"found\": true, \"x\": {x}, \"y\": {y}}}");
            let p = parse_response(&raw, 640, 480).unwrap().pixel.unwrap();
            proptest::prop_assert!((p.x - x).abs() < 1e-9 && (p.y - y).abs() < 1e-9);
        }
    }
}
