//! Per-frame label files.
//!
//! One comma-separated line per frame:
//! `frame_id,episode_id,score,duration_ms,unclipped_reward,action,x0,y0,x1,y1,...`.
//! The literal `null` marks a missing action or an empty gaze list. A header
//! line starting with `frame_id` is skipped.

use std::collections::HashMap;
use std::io::BufRead;

use crate::{Error, GazePoint, Result, NUM_ACTIONS};

/// Names of the 18 Atari actions, indexed by action id.
pub const ATARI_ACTION_NAMES: [&str; NUM_ACTIONS] = [
    "NOOP",
    "FIRE",
    "UP",
    "RIGHT",
    "LEFT",
    "DOWN",
    "UPRIGHT",
    "UPLEFT",
    "DOWNRIGHT",
    "DOWNLEFT",
    "UPFIRE",
    "RIGHTFIRE",
    "LEFTFIRE",
    "DOWNFIRE",
    "UPRIGHTFIRE",
    "UPLEFTFIRE",
    "DOWNRIGHTFIRE",
    "DOWNLEFTFIRE",
];

/// Maps symbolic action tokens to action ids.
#[derive(Debug, Clone)]
pub struct ActionVocabulary {
    names: HashMap<String, u8>,
}

impl Default for ActionVocabulary {
    /// The Atari names, also accepting `+`-joined spellings such as `UP+FIRE`.
    fn default() -> Self {
        let mut names = HashMap::new();
        for (id, name) in ATARI_ACTION_NAMES.iter().enumerate() {
            names.insert((*name).to_string(), id as u8);
        }
        let joined = [
            (6, "UP+RIGHT"),
            (7, "UP+LEFT"),
            (8, "DOWN+RIGHT"),
            (9, "DOWN+LEFT"),
            (10, "UP+FIRE"),
            (11, "RIGHT+FIRE"),
            (12, "LEFT+FIRE"),
            (13, "DOWN+FIRE"),
            (14, "UP+RIGHT+FIRE"),
            (15, "UP+LEFT+FIRE"),
            (16, "DOWN+RIGHT+FIRE"),
            (17, "DOWN+LEFT+FIRE"),
        ];
        for (id, name) in joined {
            names.insert(name.to_string(), id);
        }
        Self { names }
    }
}

impl ActionVocabulary {
    pub fn empty() -> Self {
        Self {
            names: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, action: u8) -> Result<()> {
        if action as usize >= NUM_ACTIONS {
            return Err(Error::InvalidArgument(format!(
                "action id {action} outside [0,{}]",
                NUM_ACTIONS - 1
            )));
        }
        self.names.insert(token.into(), action);
        Ok(())
    }

    /// Numeric ids in `[0,17]` resolve to themselves; anything else must be a
    /// vocabulary entry.
    pub fn resolve(&self, token: &str) -> Result<u8> {
        if let Ok(id) = token.parse::<i64>() {
            if (0..NUM_ACTIONS as i64).contains(&id) {
                return Ok(id as u8);
            }
        }
        self.names
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownAction(token.to_string()))
    }
}

/// One parsed label line.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabel {
    pub frame_id: String,
    pub episode_id: u32,
    pub score: i64,
    pub duration_ms: f64,
    pub unclipped_reward: f64,
    pub action: Option<u8>,
    /// Raw gaze samples in source-frame pixels, in recording order.
    pub gaze_points: Vec<GazePoint>,
}

const NULL: &str = "null";

fn field<T: std::str::FromStr>(token: &str, line: usize, name: &str) -> Result<T> {
    token.trim().parse::<T>().map_err(|_| Error::MalformedLine {
        line,
        reason: format!("cannot parse {name} from {token:?}"),
    })
}

/// Parses a label file into one [`FrameLabel`] per data line, in file order.
pub fn parse_label_file<R: BufRead>(
    reader: R,
    vocabulary: &ActionVocabulary,
) -> Result<Vec<FrameLabel>> {
    let mut labels = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || (labels.is_empty() && line.starts_with("frame_id")) {
            continue;
        }
        let label = parse_label_line(line, line_no, vocabulary)?;
        if !seen.insert(label.frame_id.clone()) {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: format!("duplicate frame id {:?}", label.frame_id),
            });
        }
        labels.push(label);
    }
    Ok(labels)
}

/// Parses a single data line; `line_no` is only used for error reporting.
pub fn parse_label_line(
    line: &str,
    line_no: usize,
    vocabulary: &ActionVocabulary,
) -> Result<FrameLabel> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 6 {
        return Err(Error::MalformedLine {
            line: line_no,
            reason: format!("expected at least 6 fields, found {}", fields.len()),
        });
    }
    let frame_id = fields[0].to_string();
    if frame_id.is_empty() {
        return Err(Error::MalformedLine {
            line: line_no,
            reason: "empty frame id".into(),
        });
    }
    let episode_id: u32 = field(fields[1], line_no, "episode_id")?;
    let score: i64 = field(fields[2], line_no, "score")?;
    let duration_ms: f64 = field(fields[3], line_no, "duration_ms")?;
    if !(duration_ms >= 0.0) {
        return Err(Error::MalformedLine {
            line: line_no,
            reason: format!("negative duration {duration_ms}"),
        });
    }
    let unclipped_reward: f64 = field(fields[4], line_no, "unclipped_reward")?;
    let action = match fields[5] {
        NULL => None,
        token => Some(vocabulary.resolve(token)?),
    };

    let rest = &fields[6..];
    let gaze_points = if rest.is_empty() || (rest.len() == 1 && rest[0] == NULL) {
        Vec::new()
    } else {
        if rest.len() % 2 != 0 {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: format!("odd number of gaze values ({})", rest.len()),
            });
        }
        rest.chunks_exact(2)
            .map(|xy| {
                let x: f32 = field(xy[0], line_no, "gaze x")?;
                let y: f32 = field(xy[1], line_no, "gaze y")?;
                if !x.is_finite() || !y.is_finite() {
                    return Err(Error::MalformedLine {
                        line: line_no,
                        reason: "non-finite gaze value".into(),
                    });
                }
                Ok([x, y])
            })
            .collect::<Result<Vec<_>>>()?
    };

    Ok(FrameLabel {
        frame_id,
        episode_id,
        score,
        duration_ms,
        unclipped_reward,
        action,
        gaze_points,
    })
}

/// Formats a label back into the line syntax accepted by [`parse_label_line`].
pub fn format_label_line(label: &FrameLabel) -> String {
    let mut out = format!(
        "{},{},{},{},{},",
        label.frame_id, label.episode_id, label.score, label.duration_ms, label.unclipped_reward
    );
    match label.action {
        Some(a) => out.push_str(&a.to_string()),
        None => out.push_str(NULL),
    }
    if label.gaze_points.is_empty() {
        out.push_str(",null");
    } else {
        for [x, y] in &label.gaze_points {
            out.push_str(&format!(",{x},{y}"));
        }
    }
    out
}
