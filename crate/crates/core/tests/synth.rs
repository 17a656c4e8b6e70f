use ablation_lab::ingest::*;
use ablation_lab::masking::FOCUS_RADIUS_DEG;
use ablation_lab::synth::*;
use ablation_lab::{Error, GazePoint, FRAME_SIZE};
use image::GrayImage;

const PPD: f64 = DEFAULT_PIXELS_PER_DEGREE;

/// Design-space coordinates of source pixels that differ clearly from the
/// episode background.
fn glyph_pixels(frame: &GrayImage, background: &[f32]) -> Vec<[f64; 2]> {
    let (w, h) = frame.dimensions();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = frame.get_pixel(x, y)[0] as f64 / 255.0;
            if (v - background[(y * w + x) as usize] as f64).abs() > 0.2 {
                out.push([
                    x as f64 * FRAME_SIZE as f64 / w as f64,
                    y as f64 * FRAME_SIZE as f64 / h as f64,
                ]);
            }
        }
    }
    out
}

fn dist(a: [f64; 2], g: GazePoint) -> f64 {
    ((a[0] - g[0] as f64).powi(2) + (a[1] - g[1] as f64).powi(2)).sqrt()
}

#[test]
fn focus_glyphs_sit_inside_the_disc() {
    let rec = generate_recording(SyntheticPolicyKind::Focus, 1, 100, 4, 1).unwrap();
    let store = build_replay(&rec.frame_source(), &[rec.session()], "focus", None, PPD).unwrap();
    assert_eq!(store.clamped_gaze_points, 0);
    let ep = &rec.episodes[0];
    let limit = FOCUS_RADIUS_DEG * PPD;
    for t in 0..100 {
        let gaze = store.gaze(t)[0];
        let (center, class) = ep.truth[t].glyph.unwrap();
        assert!(dist(center, gaze) < limit);
        assert_eq!(store.action(t), class);
        let pixels = glyph_pixels(&ep.frames[t], &ep.background);
        assert!(!pixels.is_empty());
        assert!(pixels.iter().all(|&p| dist(p, gaze) < limit), "frame {t}");
    }
}

#[test]
fn periphery_glyphs_stay_outside() {
    let rec = generate_recording(SyntheticPolicyKind::Periphery, 1, 100, 4, 2).unwrap();
    let ep = &rec.episodes[0];
    for t in 0..100 {
        let gaze = ep.truth[t].gaze;
        let pixels = glyph_pixels(&ep.frames[t], &ep.background);
        assert!(!pixels.is_empty());
        assert!(pixels.iter().all(|&p| dist(p, gaze) > PERIPHERY_CLEAR_DEG * PPD), "frame {t}");
        assert_eq!(ep.labels[t].action, Some(ep.truth[t].glyph.unwrap().1));
    }
}

#[test]
fn noise_actions_are_uniform() {
    let ep = generate_episode(SyntheticPolicyKind::Noise, 10_000, 4, 3).unwrap();
    let mut counts = [0f64; 4];
    for l in &ep.labels {
        counts[l.action.unwrap() as usize] += 1.0;
    }
    let chi2: f64 = counts.iter().map(|c| (c - 2500.0).powi(2) / 2500.0).sum();
    // 99% quantile of χ² with 3 degrees of freedom
    assert!(chi2 < 11.345, "{counts:?}");
}

#[test]
fn memory_cue_comes_from_the_past() {
    let ep = generate_episode(SyntheticPolicyKind::Memory, 300, 4, 4).unwrap();
    for t in 0..300 {
        let pixels = glyph_pixels(&ep.frames[t], &ep.background);
        // frames outside a flash carry nothing but background
        assert_eq!(pixels.is_empty(), !memory_flash(t), "frame {t}");
        if let Some(o) = memory_cue_offset(t) {
            assert_eq!(ep.labels[t].action, Some(ep.truth[t - o].glyph.unwrap().1));
        }
    }
}

#[test]
fn gaze_location_decides_the_action() {
    let ep = generate_episode(SyntheticPolicyKind::GazeLoc, 200, 4, 5).unwrap();
    for t in 0..200 {
        assert_eq!(ep.labels[t].action, Some(gaze_quadrant(ep.truth[t].gaze)));
        assert!(glyph_pixels(&ep.frames[t], &ep.background).is_empty());
    }
    assert!(matches!(
        generate_episode(SyntheticPolicyKind::GazeLoc, 200, 3, 5),
        Err(Error::InvalidArity(3))
    ));
}

#[test]
fn arguments_are_checked() {
    assert!(matches!(
        generate_episode(SyntheticPolicyKind::Focus, 100, 19, 0),
        Err(Error::InvalidArity(19))
    ));
    assert!(generate_episode(SyntheticPolicyKind::Focus, 59, 4, 0).is_err());
    assert!(generate_episode(SyntheticPolicyKind::Focus, 60, 18, 0).is_ok());
}

#[test]
fn generation_is_seeded() {
    let a = generate_recording(SyntheticPolicyKind::Memory, 2, 80, 4, 9).unwrap();
    let b = generate_recording(SyntheticPolicyKind::Memory, 2, 80, 4, 9).unwrap();
    assert_eq!(a.label_text(), b.label_text());
    assert!(a.episodes.iter().zip(&b.episodes).all(|(x, y)| x.frames == y.frames));
    let c = generate_recording(SyntheticPolicyKind::Memory, 2, 80, 4, 10).unwrap();
    assert_ne!(a.label_text(), c.label_text());
}

#[test]
fn written_recording_ingests_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let rec = generate_recording(SyntheticPolicyKind::GazeLoc, 2, 70, 4, 11).unwrap();
    rec.write(dir.path()).unwrap();
    let labels = dir.path().join(rec.label_file_name());
    let session = read_label_session(&labels, &ActionVocabulary::default()).unwrap();
    assert_eq!(session.subject_id.as_deref(), Some("SYN"));
    let frames = ImageDirSource::open(&dir.path().join("frames")).unwrap();
    let store = build_replay(&frames, &[session], "syn", None, PPD).unwrap();
    assert_eq!(store.len(), 140);
    assert_eq!(store.clamped_gaze_points, 0);
    let direct = build_replay(&rec.frame_source(), &[rec.session()], "syn", None, PPD).unwrap();
    for i in 0..store.len() {
        assert_eq!(store.frame(i), direct.frame(i));
        assert_eq!(store.action(i), direct.action(i));
        assert_eq!(store.gaze(i), direct.gaze(i));
    }
    assert!(store.terminal(69) && !store.terminal(68));
}
