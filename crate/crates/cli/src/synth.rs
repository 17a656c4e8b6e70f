use std::path::PathBuf;

use ablation_lab::synth::{generate_recording, SyntheticPolicyKind};
use serde::Serialize;

use crate::error::CliResult;
use crate::output::prepare_out_dir;
use crate::SynthArgs;

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub kind: String,
    pub frames: PathBuf,
    pub labels: PathBuf,
    pub states: usize,
}

pub fn synth(args: &SynthArgs) -> CliResult<SynthSummary> {
    let kind: SyntheticPolicyKind = args.kind.parse()?;
    let rec = generate_recording(kind, args.episodes, args.length, args.arity, args.seed)?;
    let label_file = rec.label_file_name();
    prepare_out_dir(&args.out, args.force, &["frames", &label_file])?;
    rec.write(&args.out)?;
    Ok(SynthSummary {
        kind: kind.name().to_string(),
        frames: args.out.join("frames"),
        labels: args.out.join(label_file),
        states: rec.episodes.iter().map(|e| e.labels.len()).sum(),
    })
}
