use nalgebra::{UnitQuaternion, Vector3};
use suction_core::pipeline::{annotate, run_pipeline, PipelineConfig, PipelineInput};
use suction_core::ranking::{Policy, PolicyConfig};
use suction_core::robot::RobotModel;
use suction_core::scene::{render, BinSpec, CameraSpec, Pose, SceneDescription, SceneObject, ShapePrimitive};

fn scene_with(objects: Vec<(ShapePrimitive, Pose)>) -> SceneDescription {
    let mut scene = SceneDescription::empty(BinSpec::default(), CameraSpec::default());
    for (i, (shape, pose)) in objects.into_iter().enumerate() {
        scene.objects.push(SceneObject {
            label: i as u16 + 1,
            shape,
            pose,
        });
    }
    scene
}

fn box_and_lying_cylinder() -> SceneDescription {
    let lying = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
    scene_with(vec![
        (
            ShapePrimitive::Box {
                extents: [0.08, 0.06, 0.04],
            },
            Pose::translation(Vector3::new(-0.08, 0.0, 0.02)),
        ),
        (
            ShapePrimitive::Cylinder {
                radius: 0.03,
                height: 0.10,
            },
            Pose::from_parts(Vector3::new(0.08, 0.0, 0.03), lying),
        ),
    ])
}

/// Mean quality over the graspable pixels of each object label.
fn mean_quality_per_label(scene: &SceneDescription) -> Vec<(usize, f64)> {
    let (depth, seg) = render(scene).unwrap();
    let cfg = PipelineConfig {
        reachability: false,
        ..Default::default()
    };
    let ann = annotate(&PipelineInput::from_scene(scene, depth, Some(seg.clone())), &RobotModel::reference(), &cfg).unwrap();
    let mut sums = vec![(0usize, 0.0f64); scene.objects.len() + 1];
    for (i, &g) in ann.graspable.graspable.iter().enumerate() {
        if g {
            let l = seg.labels[i] as usize;
            sums[l].0 += 1;
            sums[l].1 += ann.quality.quality.values[i];
        }
    }
    sums.into_iter().map(|(n, s)| (n, if n > 0 { s / n as f64 } else { f64::NAN })).collect()
}

#[test]
fn box_top_outscores_cylinder_lateral() {
    let m = mean_quality_per_label(&box_and_lying_cylinder());
    let (box_q, cyl_q) = (m[1], m[2]);
    assert!(box_q.0 > 0 && cyl_q.0 > 0, "{m:?}");
    assert!(box_q.1 > cyl_q.1, "{m:?}");
}

#[test]
fn centered_box_top_candidate_is_at_the_area_center() {
    let scene = scene_with(vec![(
        ShapePrimitive::Box {
            extents: [0.08, 0.06, 0.04],
        },
        Pose::translation(Vector3::new(0.0, 0.0, 0.02)),
    )]);
    let (depth, seg) = render(&scene).unwrap();
    let cfg = PipelineConfig {
        reachability: false,
        ..Default::default()
    };
    let out = run_pipeline(&PipelineInput::from_scene(&scene, depth, Some(seg)), &RobotModel::reference(), &cfg).unwrap();
    let ann = &out.annotation;
    let w = ann.graspable.width;
    let q = &ann.quality.quality.values;
    let argmax = (0..q.len()).fold(0, |b, i| if q[i] > q[b] { i } else { b });
    let top = out.candidates[0].pixel;
    assert_eq!(top, [argmax / w, argmax % w]);
    // Centroid of the box-top graspable area.
    let px: Vec<usize> = (0..q.len()).filter(|&i| ann.graspable.graspable[i]).collect();
    let (mut r, mut c) = (0.0, 0.0);
    for &i in &px {
        r += (i / w) as f64;
        c += (i % w) as f64;
    }
    let (r, c) = (r / px.len() as f64, c / px.len() as f64);
    let d = ((top[0] as f64 - r).powi(2) + (top[1] as f64 - c).powi(2)).sqrt();
    assert!(d <= 3.0, "candidate {top:?} vs centroid ({r:.1}, {c:.1})");
    assert!(out.candidates[0].quality > 0.99);
    assert_eq!(out.candidates.len(), 1);
}

#[test]
fn policy_two_candidates_are_reachable() {
    let scene = box_and_lying_cylinder();
    let (depth, seg) = render(&scene).unwrap();
    let cfg = PipelineConfig {
        policy: PolicyConfig {
            policy: Policy::QualityAndReachability,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = run_pipeline(&PipelineInput::from_scene(&scene, depth, Some(seg)), &RobotModel::reference(), &cfg).unwrap();
    assert!(!out.candidates.is_empty());
    let reach = out.annotation.reachability.as_ref().unwrap();
    for c in &out.candidates {
        let a = c.reachability.unwrap();
        assert!(a > 0.3 && c.quality > 0.5);
        assert_eq!(a, reach.get(c.pixel[0], c.pixel[1]));
        assert_eq!((a * 72.0).round() / 72.0, a);
    }
}
