//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Run with `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::*;
use splatsynth::annotations::{
    decode_rle, encode_rle, mask_to_annotation, read_coco, write_coco, AnnotationError, BinaryMask, CocoCategory,
    CocoImage,
};
use splatsynth::background::{sample_placement, write_pfm, DepthConvention, DepthMap, SupportPlane};
use splatsynth::composer::{compose, median_filter_depth, solve_pose, AugmentationConfig, ComposeParams};
use splatsynth::depth_client::{fetch_depth, DepthClientError, DepthServiceConfig};
use splatsynth::extraction::{extract_foreground, ExtractionParams};
use splatsynth::geometry::{dbscan, knn, ransac_plane, yaw_rotation, PointCloud, RansacParams};
use splatsynth::pipeline::{run_generate, GenerationConfig, ObjectSource, RunOptions};
use splatsynth::renderer::{
    eval_sh, project_model, project_unculled, render, render_splats, sh_basis, Camera, Intrinsics, RenderOptions,
};
use splatsynth::splat_io::{save_splat_ply, Gaussian, SplatModel};
use splatsynth::transform::ShTransform;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn extraction_oracle() -> Outcome {
    let fx = extraction_fixture(11);
    let start = Instant::now();
    let mut r = rng(1);
    let ex = extract_foreground(&fx.model, "ball", &ExtractionParams::default(), &mut r).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let count = |l: Label| ex.kept.iter().filter(|&&i| fx.labels[i] == l).count();
    let (object, plane, halo) = (count(Label::Object), count(Label::Plane), count(Label::Halo));
    let angle = ex.object.up.dot(&fx.normal).clamp(-1.0, 1.0).acos().to_degrees();
    ensure(object as f64 >= 0.99 * 2000.0, format!("object recall {object}/2000"))?;
    ensure(plane == 0, format!("{plane} plane points kept"))?;
    ensure(halo as f64 <= 0.01 * 500.0, format!("{halo} halo points kept"))?;
    ensure(angle <= 1.0, format!("up off by {angle:.3} deg"))?;
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:.2?}"))?;
    Ok(format!(
        "object {object}/2000, plane {plane}, halo {halo}/500, up error {angle:.4} deg, {elapsed:.2?}"
    ))
}

fn geometry_oracles() -> Outcome {
    // dbscan against the brute-force reference
    let mut r = rng(2);
    for trial in 0..100 {
        let centers: Vec<Vector3<f64>> = (0..3).map(|_| random_unit(&mut r) * 3.0).collect();
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|i| {
                if i % 5 == 0 {
                    Vector3::new(r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-4.0..4.0))
                } else {
                    centers[i % 3] + random_unit(&mut r) * r.random_range(0.0..1.0)
                }
            })
            .collect();
        let eps = r.random_range(0.25..0.6);
        let min_points = r.random_range(3..15);
        let got = dbscan(&PointCloud::new(pts.clone()), eps, min_points).map_err(|e| e.to_string())?;
        ensure(got == brute_dbscan(&pts, eps, min_points), format!("dbscan mismatch in cloud {trial}"))?;
    }
    // knn against an exhaustive scan
    let pts: Vec<Vector3<f64>> = (0..2000)
        .map(|_| Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let nn = knn(&PointCloud::new(pts.clone()), 12).map_err(|e| e.to_string())?;
    for (i, p) in pts.iter().enumerate() {
        let mut all: Vec<(f64, usize)> = (0..pts.len()).filter(|&j| j != i).map(|j| ((pts[j] - p).norm(), j)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expect: Vec<usize> = all[..12].iter().map(|x| x.1).collect();
        ensure(nn.indices[i] == expect, format!("knn mismatch at point {i}"))?;
    }
    // ransac on planted noiseless planes
    let mut worst_recall: f64 = 1.0;
    let mut worst_angle: f64 = 0.0;
    for _ in 0..20 {
        let n = random_unit(&mut r);
        let (u, v) = basis(&n);
        let d = r.random_range(-2.0..2.0);
        let mut pts: Vec<Vector3<f64>> = (0..2000)
            .map(|_| u * r.random_range(-3.0..3.0) + v * r.random_range(-3.0..3.0) - n * d)
            .collect();
        pts.extend((0..500).map(|_| {
            u * r.random_range(-3.0..3.0) + v * r.random_range(-3.0..3.0) - n * d + n * r.random_range(0.3..3.0)
        }));
        let plane = ransac_plane(&PointCloud::new(pts), &RansacParams::default(), &mut r).map_err(|e| e.to_string())?;
        let recall = plane.inliers.iter().filter(|&&i| i < 2000).count() as f64 / 2000.0;
        let angle = plane.normal.dot(&n).abs().min(1.0).acos().to_degrees();
        worst_recall = worst_recall.min(recall);
        worst_angle = worst_angle.max(angle);
    }
    ensure(worst_recall >= 0.99, format!("ransac recall {worst_recall}"))?;
    ensure(worst_angle <= 1.0, format!("ransac normal error {worst_angle} deg"))?;
    // median filter against a sort-based reference
    for trial in 0..20 {
        let (w, h) = (r.random_range(5..40), r.random_range(5..30));
        let values: Vec<f32> = (0..w * h).map(|_| r.random_range(1.0f32..10.0)).collect();
        let map = DepthMap {
            width: w,
            height: h,
            values: values.clone(),
            convention: DepthConvention::Depth,
        };
        for k in [1, 3, 5, 7] {
            ensure(
                median_filter_depth(&map, k).values == brute_median(&values, w, h, k),
                format!("median mismatch trial {trial} kernel {k}"),
            )?;
        }
    }
    Ok(format!(
        "dbscan 100/100 equal, knn exact, ransac worst recall {worst_recall:.4} / normal {worst_angle:.2e} deg, median exact"
    ))
}

fn random_splat_scene(seed: u64, n: usize, cam: &Camera) -> SplatModel {
    let mut r = rng(seed);
    let inv = cam.rotation.inverse();
    let center = cam.center();
    let k = cam.intrinsics;
    let gs = (0..n)
        .map(|_| {
            let z = r.random_range(2.0..8.0);
            let u = r.random_range(-10.0..k.width as f64 + 10.0);
            let v = r.random_range(-10.0..k.height as f64 + 10.0);
            let pc = Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
            let mut g = Gaussian::with_color(
                inv * pc + center,
                Vector3::new(r.random_range(0.01..0.25), r.random_range(0.01..0.25), r.random_range(0.01..0.25)),
                UnitQuaternion::from_euler_angles(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)),
                r.random_range(0.05..1.0),
                [r.random(), r.random(), r.random()],
            );
            for c in 1..16 {
                g.sh[c] = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
            }
            g
        })
        .collect();
    SplatModel::new(gs, 3)
}

fn rasterizer_analytics() -> Outcome {
    let mut r = rng(3);
    // projected means
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = Intrinsics::from_fov(r.random_range(64..1024), r.random_range(64..768), r.random_range(30.0..100.0));
        let cam = Camera::new(
            k,
            UnitQuaternion::from_euler_angles(r.random_range(-3.0..3.0), r.random_range(-1.5..1.5), r.random_range(-3.0..3.0)),
            Vector3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)),
        )
        .map_err(|e| e.to_string())?;
        let model = random_splat_scene(r.random(), 1, &cam);
        let g = &model.gaussians[0];
        let s = project_unculled(g, &cam).ok_or("on-frustum Gaussian not projected")?;
        worst = worst.max((s.mean2d - pinhole(&cam, &g.mean)).norm());
    }
    ensure(worst <= 0.25, format!("projected mean off by {worst} px"))?;

    // single-splat peak alpha
    let k = Intrinsics::from_fov(64, 48, 55.0);
    let cam = Camera::identity(k).map_err(|e| e.to_string())?;
    let mut peak_err: f64 = 0.0;
    for &opacity in &[0.1, 0.35, 0.5, 0.8, 0.95] {
        let (u, v, z) = (20.0, 30.0, 4.0);
        let p = Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
        let model = SplatModel::new(vec![dot(p, [0.2, 0.4, 0.6], 0.05, opacity)], 0);
        let out = render(&model, &cam, &RenderOptions::default());
        peak_err = peak_err.max((f64::from(out.alpha_at(20, 30)) - opacity).abs());
    }
    ensure(peak_err <= 1e-3, format!("peak alpha off by {peak_err}"))?;

    // white override and tiled-vs-brute
    let cam = Camera::new(
        Intrinsics::from_fov(96, 72, 60.0),
        UnitQuaternion::from_euler_angles(0.1, -0.2, 0.05),
        Vector3::new(0.3, -0.1, 0.2),
    )
    .map_err(|e| e.to_string())?;
    let mut white_err: f64 = 0.0;
    let mut tile_err: f64 = 0.0;
    for seed in 0..5 {
        let model = random_splat_scene(100 + seed, 200, &cam);
        let white = render(
            &model,
            &cam,
            &RenderOptions {
                white_override: true,
                ..Default::default()
            },
        );
        for (i, a) in white.alpha.iter().enumerate() {
            for c in 0..3 {
                white_err = white_err.max(f64::from((white.color[3 * i + c] - a).abs()));
            }
        }
        let splats = project_model(&model, &cam, &RenderOptions::default());
        let tiled = render_splats(&splats, 96, 72);
        let (color, alpha) = brute_render(&splats, 96, 72);
        for i in 0..alpha.len() {
            tile_err = tile_err.max((f64::from(tiled.alpha[i]) - alpha[i]).abs());
            for c in 0..3 {
                tile_err = tile_err.max((f64::from(tiled.color[3 * i + c]) - color[3 * i + c]).abs());
            }
        }
    }
    ensure(white_err <= 1e-5, format!("white render differs from alpha by {white_err}"))?;
    ensure(tile_err <= 1e-6, format!("tiled render differs from brute force by {tile_err}"))?;

    // SH against Legendre-based tables
    let mut sh_err: f64 = 0.0;
    for _ in 0..2000 {
        let d = random_unit(&mut r);
        let basis = sh_basis(&d, 3);
        for l in 0..=3i32 {
            for m in -l..=l {
                let idx = (l * l + l + m) as usize;
                sh_err = sh_err.max((basis[idx] - real_sh(l, m, &d)).abs());
            }
        }
        let mut coeffs = [[0.0; 3]; 16];
        for c in coeffs.iter_mut() {
            *c = [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)];
        }
        let rgb = eval_sh(&coeffs, &d, 3);
        for ch in 0..3 {
            let mut v = 0.5;
            for l in 0..=3i32 {
                for m in -l..=l {
                    v += coeffs[(l * l + l + m) as usize][ch] * real_sh(l, m, &d);
                }
            }
            sh_err = sh_err.max((rgb[ch] - v.clamp(0.0, 1.0)).abs());
        }
    }
    ensure(sh_err <= 1e-6, format!("SH differs from reference by {sh_err}"))?;
    Ok(format!(
        "mean {worst:.2e} px, peak {peak_err:.2e}, white {white_err:.2e}, tiled {tile_err:.2e}, SH {sh_err:.2e}"
    ))
}

fn quant(v: f64) -> i32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as i32
}

fn composition_invariants() -> Outcome {
    let (w, h) = (96, 72);
    let params = ComposeParams {
        augmentation: AugmentationConfig::disabled(),
        ..Default::default()
    };
    let obj = canonical_blob(3000, Vector3::new(0.8, 0.7, 0.8), 4, [0.9, 0.3, 0.2]);
    let pose = solve_pose(&Vector3::new(0.0, -1.0, 0.0), &Vector3::new(0.0, 0.6, 5.0), 0.3, 1.0);

    // near wall on the left half
    let depth: Vec<f32> = (0..w * h).map(|i| if i % w < w / 2 { 1.0 } else { 10.0 }).collect();
    let scene = constructed_scene(w, h, depth, 55.0);
    let (image, records) = compose(&scene, &[(&obj, pose)], &params, &mut rng(5)).map_err(|e| e.to_string())?;
    let rec = &records[0];
    let mut right_visible = 0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x < w / 2 {
                ensure(!rec.visibility.data[i], format!("visible behind wall at ({x},{y})"))?;
                ensure(image.get(x, y) == scene.image.get(x, y), format!("background changed at ({x},{y})"))?;
            } else {
                ensure(
                    rec.visibility.data[i] == (rec.raw_alpha[i] > 0.5),
                    format!("mask not intact at ({x},{y})"),
                )?;
                right_visible += usize::from(rec.visibility.data[i]);
            }
        }
    }
    ensure(right_visible > 50, format!("only {right_visible} visible pixels on the open half"))?;

    // unoccluded placement follows the over operator
    let scene = constructed_scene(w, h, vec![10.0; w * h], 55.0);
    let (image, _) = compose(&scene, &[(&obj, pose)], &params, &mut rng(6)).map_err(|e| e.to_string())?;
    let model = pose.transform(&obj.model, ShTransform::Rotate);
    let layer = render(&model, &scene.camera, &RenderOptions::default());
    let mut over_err = 0;
    for i in 0..w * h {
        let a = f64::from(layer.alpha[i]);
        for c in 0..3 {
            let expect = f64::from(layer.color[3 * i + c]) + (1.0 - a) * f64::from(scene.image.data[3 * i + c]);
            over_err = over_err.max((quant(expect) - quant(f64::from(image.data[3 * i + c]))).abs());
        }
    }
    ensure(over_err <= 1, format!("over operator off by {over_err} levels"))?;

    // two objects against a joint render
    let rear_obj = canonical_blob(3000, Vector3::new(0.9, 0.8, 0.9), 7, [0.2, 0.4, 0.9]);
    let front = solve_pose(&Vector3::new(0.0, -1.0, 0.0), &Vector3::new(0.1, 0.6, 4.0), 1.1, 1.0);
    let rear = solve_pose(&Vector3::new(0.0, -1.0, 0.0), &Vector3::new(-0.9, 0.6, 6.5), 0.2, 1.0);
    let (image, records) =
        compose(&scene, &[(&rear_obj, rear), (&obj, front)], &params, &mut rng(8)).map_err(|e| e.to_string())?;
    let mut joint = rear.transform(&rear_obj.model, ShTransform::Rotate);
    joint.gaussians.extend(front.transform(&obj.model, ShTransform::Rotate).gaussians);
    let out = render(&joint, &scene.camera, &RenderOptions::default());
    let mut close = 0;
    for i in 0..w * h {
        let a = f64::from(out.alpha[i]);
        let ok = (0..3).all(|c| {
            let expect = f64::from(out.color[3 * i + c]) + (1.0 - a) * f64::from(scene.image.data[3 * i + c]);
            (quant(expect) - quant(f64::from(image.data[3 * i + c]))).abs() <= 2
        });
        close += usize::from(ok);
    }
    let frac = close as f64 / (w * h) as f64;
    ensure(frac >= 0.98, format!("joint render agreement {frac:.4}"))?;
    let front_rec = &records[1];
    let overlap = (0..w * h)
        .filter(|&i| records[0].visibility.data[i] && front_rec.raw_alpha[i] > 0.5)
        .count();
    ensure(overlap == 0, format!("rear mask overlaps front object at {overlap} pixels"))?;
    Ok(format!(
        "wall half empty and untouched, over operator within {over_err} level, joint agreement {:.2}%",
        100.0 * frac
    ))
}

fn placement_statistics() -> Outcome {
    let mut r = rng(9);
    let planes: Vec<SupportPlane> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&area| {
            let normal = (Vector3::new(0.0, -1.0, 0.0) + random_unit(&mut r) * 0.1).normalize();
            let offset = r.random_range(-2.0..2.0);
            let (u, v) = basis(&normal);
            let inlier_points = (0..200)
                .map(|_| {
                    u * r.random_range(-1.0..1.0) + v * r.random_range(-1.0..1.0) - normal * offset
                        + normal * r.random_range(-0.01..0.01)
                })
                .collect();
            SupportPlane {
                normal,
                offset,
                inlier_points,
                area,
                up_alignment: 1.0,
            }
        })
        .collect();
    let draws = 10_000;
    let mut counts = [0usize; 3];
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let (i, p) = sample_placement(&planes, &mut r).map_err(|e| e.to_string())?;
        counts[i] += 1;
        worst = worst.max(planes[i].signed_distance(&p).abs());
    }
    let expected = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].map(|p| p * draws as f64);
    let stat: f64 = counts.iter().zip(&expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(2.0).map_err(|e| e.to_string())?.cdf(stat);
    ensure(p > 0.01, format!("chi-square p = {p:.4} for counts {counts:?}"))?;
    ensure(worst < 1e-9, format!("placement {worst:e} off its plane"))?;
    Ok(format!("counts {counts:?}, chi2 {stat:.3}, p {p:.3}, max plane distance {worst:.1e}"))
}

fn pose_algebra() -> Outcome {
    let mut r = rng(10);
    let mut up_err: f64 = 0.0;
    let mut group_err: f64 = 0.0;
    for _ in 0..10_000 {
        let n = random_unit(&mut r);
        let (a, b) = (r.random_range(0.0..std::f64::consts::TAU), r.random_range(-10.0..10.0));
        let pose = solve_pose(&n, &Vector3::zeros(), a, 1.0);
        up_err = up_err.max((pose.rotation * Vector3::y() - n).norm());
        let composed = pose.rotation * yaw_rotation(&Vector3::y(), b);
        let direct = solve_pose(&n, &Vector3::zeros(), a + b, 1.0).rotation;
        group_err = group_err.max(composed.angle_to(&direct));
    }
    ensure(up_err <= 1e-9, format!("R·up off by {up_err:e}"))?;
    ensure(group_err <= 1e-9, format!("yaw composition off by {group_err:e}"))?;
    Ok(format!("up error {up_err:.1e}, yaw group error {group_err:.1e}"))
}

fn annotation_checks() -> Outcome {
    let mut r = rng(12);
    for trial in 0..1000 {
        let (w, h) = (r.random_range(1..64), r.random_range(1..64));
        let density = r.random_range(0.0..1.0);
        let mut mask = BinaryMask::from_fn(w, h, |_, _| false);
        for v in mask.data.iter_mut() {
            *v = r.random_bool(density);
        }
        if trial % 7 == 0 {
            mask.data.iter_mut().for_each(|v| *v = false);
            mask.data[r.random_range(0..w * h)] = true;
        }
        ensure(decode_rle(&encode_rle(&mask)).map_err(|e| e.to_string())? == mask, format!("RLE mismatch {trial}"))?;
        let set: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| mask.get(x, y)).collect();
        match mask_to_annotation(&mask, 1, 1) {
            Ok(a) => {
                let x0 = set.iter().map(|p| p.0).min().unwrap();
                let x1 = set.iter().map(|p| p.0).max().unwrap();
                let y0 = set.iter().map(|p| p.1).min().unwrap();
                let y1 = set.iter().map(|p| p.1).max().unwrap();
                let bbox = [x0, y0, x1 - x0 + 1, y1 - y0 + 1].map(|v| v as f64);
                ensure(a.bbox == bbox, format!("bbox {:?} vs {:?}", a.bbox, bbox))?;
                ensure(a.area == set.len() as f64, "area mismatch")?;
            }
            Err(AnnotationError::EmptyMask) => ensure(set.is_empty(), "non-empty mask rejected")?,
            Err(e) => return Err(e.to_string()),
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let images: Vec<CocoImage> = (1..=5)
        .map(|id| CocoImage {
            id,
            file_name: format!("train/{id:06}.png"),
            width: 32,
            height: 24,
        })
        .collect();
    let categories: Vec<CocoCategory> = ["mug", "drill", "box"]
        .iter()
        .enumerate()
        .map(|(i, n)| CocoCategory {
            id: i as u64 + 1,
            name: n.to_string(),
            supercategory: "object".into(),
        })
        .collect();
    let mut annotations = Vec::new();
    for id in (1..=12).rev() {
        let mut m = BinaryMask::from_fn(32, 24, |_, _| false);
        m.set(r.random_range(0..32), r.random_range(0..24), true);
        let mut a = mask_to_annotation(&m, r.random_range(1..=3), r.random_range(1..=5)).map_err(|e| e.to_string())?;
        a.id = id;
        annotations.push(a);
    }
    let path = dir.path().join("coco.json");
    write_coco(&images, &annotations, &categories, &path).map_err(|e| e.to_string())?;
    let back = read_coco(&path).map_err(|e| e.to_string())?;
    annotations.sort_by_key(|a| a.id);
    ensure(back.images == images && back.categories == categories && back.annotations == annotations, "COCO re-parse differs")?;
    for a in &back.annotations {
        ensure(back.images.iter().any(|i| i.id == a.image_id), "dangling image reference")?;
        ensure(back.categories.iter().any(|c| c.id == a.category_id), "dangling category reference")?;
    }
    let mut bad = annotations.clone();
    bad[0].image_id = 99;
    ensure(
        matches!(
            write_coco(&images, &bad, &categories, dir.path().join("bad.json")),
            Err(AnnotationError::DanglingReference { .. })
        ),
        "dangling reference not rejected",
    )?;
    Ok("1000 masks round-trip, bboxes exact, COCO re-parse equal with intact references".into())
}

fn write_generation_inputs(dir: &std::path::Path, n_object: usize) -> GenerationConfig {
    for (i, tint) in [[0.9, 0.3, 0.2], [0.2, 0.7, 0.3]].iter().enumerate() {
        let model = capture_scene(30_000, n_object, 40 + i as u64, *tint);
        save_splat_ply(&model, dir.join(format!("object{i}.ply"))).unwrap();
    }
    let mut manifest = String::new();
    for b in 0..3 {
        let (png, pfm) = write_room(dir, &format!("bg{b}"), 640, 480, b == 1, 60 + b as u64);
        manifest.push_str(&format!("[[entries]]\nimage = \"{png}\"\ndepth = \"{pfm}\"\nconvention = \"depth\"\n\n"));
    }
    std::fs::write(dir.join("backgrounds.toml"), manifest).unwrap();
    GenerationConfig {
        backgrounds: dir.join("backgrounds.toml"),
        image_count: 20,
        seed: 2024,
        objects: (0..2)
            .map(|i| ObjectSource {
                name: format!("object{i}"),
                path: dir.join(format!("object{i}.ply")),
                extracted: false,
            })
            .collect(),
        ..Default::default()
    }
}

fn end_to_end_determinism() -> Outcome {
    let inputs = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = write_generation_inputs(inputs.path(), 100_000);
    let mut trees = Vec::new();
    let mut slowest = Duration::ZERO;
    for (run, workers) in [(0, 8), (1, 8), (2, 1)] {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = GenerationConfig {
            output: out.path().to_path_buf(),
            workers,
            ..base.clone()
        };
        let start = Instant::now();
        let (summary, _) = run_generate(&cfg, RunOptions::default()).map_err(|e| format!("run {run}: {e}"))?;
        slowest = slowest.max(start.elapsed());
        ensure(summary.images == 20, format!("{} images written", summary.images))?;
        ensure(summary.annotations > 0, "no annotations produced")?;
        trees.push((tree_snapshot(out.path()), summary));
    }
    ensure(trees[0].0 == trees[1].0, "two 8-worker runs differ")?;
    ensure(trees[0].0 == trees[2].0, "1-worker run differs from 8-worker run")?;
    ensure(slowest < Duration::from_secs(300), format!("run took {slowest:.2?}"))?;
    let s = &trees[0].1;
    Ok(format!(
        "{} files identical across 3 runs, {} annotations, slowest run {slowest:.2?}",
        trees[0].0.len(),
        s.annotations
    ))
}

fn parameter_conformance() -> Outcome {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_splatsynth"))
        .args(["generate", "--print-config"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("exit status {}", out.status))?;
    let dump: toml::Value = toml::from_str(&String::from_utf8_lossy(&out.stdout)).map_err(|e| e.to_string())?;
    let get = |path: &str| -> Result<toml::Value, String> {
        path.split('.')
            .try_fold(&dump, |v, k| v.get(k))
            .cloned()
            .ok_or_else(|| format!("{path} missing from dump"))
    };
    let checks: [(&str, toml::Value); 8] = [
        ("extraction.outlier.neighbors", 50.into()),
        ("extraction.outlier.std_ratio", 0.1.into()),
        ("extraction.dbscan_eps", 0.5.into()),
        ("extraction.dbscan_min_points", 100.into()),
        ("background.fov_deg", 55.0.into()),
        ("image_count", 5000.into()),
        ("objects_per_image", toml::Value::Array(vec![1.into(), 3.into()])),
        ("extraction.plane.iterations", 1000.into()),
    ];
    for (path, want) in &checks {
        let got = get(path)?;
        ensure(got == *want, format!("{path} = {got}, expected {want}"))?;
    }
    Ok("outlier (50, 0.1), DBSCAN (0.5, 100), FOV 55, 5000 images, 1-3 objects".into())
}

fn depth_client_suite() -> Outcome {
    use mock::{serve, Reply};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let image = dir.path().join("bg.png");
    splatsynth::imagebuf::RgbImage::filled(8, 6, [0.5; 3]).save_png(&image).map_err(|e| e.to_string())?;
    let mut pfm = Vec::new();
    write_pfm(&mut pfm, 8, 6, &[2.5; 48]).map_err(|e| e.to_string())?;
    let cfg = |url: &str, timeout: f64, retries: u32| DepthServiceConfig {
        base_url: url.to_string(),
        timeout_secs: timeout,
        retries,
        ..Default::default()
    };

    let ok = serve(vec![Reply::Pfm {
        convention: "inverse_depth".into(),
        body: pfm.clone(),
    }]);
    let got = fetch_depth(&image, &cfg(&ok.url, 5.0, 3)).map_err(|e| e.to_string())?;
    ensure(got.depth.values.iter().all(|&v| v == 2.5), "constant map not preserved")?;
    ensure(got.convention == DepthConvention::InverseDepth, "convention tag lost")?;
    ensure(ok.count() == 1, format!("{} requests for a clean fetch", ok.count()))?;

    let flaky = serve(vec![
        Reply::Status(500),
        Reply::Pfm {
            convention: "depth".into(),
            body: pfm,
        },
    ]);
    let got = fetch_depth(&image, &cfg(&flaky.url, 5.0, 3)).map_err(|e| e.to_string())?;
    ensure(got.attempts == 2 && flaky.count() == 2, format!("{} requests after one failure", flaky.count()))?;

    let slow = serve(vec![Reply::Stall(Duration::from_secs(3))]);
    let start = Instant::now();
    let err = fetch_depth(&image, &cfg(&slow.url, 0.3, 1));
    let elapsed = start.elapsed();
    ensure(matches!(err, Err(DepthClientError::Timeout)), format!("expected timeout, got {err:?}"))?;
    ensure(slow.count() == 2, format!("{} requests with one retry", slow.count()))?;
    let bound = Duration::from_secs_f64(0.3 * 2.0 + 0.5 + 1.0);
    ensure(elapsed <= bound, format!("timeout path took {elapsed:.2?}"))?;
    Ok(format!("success 1 request, retry 2 requests, timeout 2 requests in {elapsed:.2?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("extraction oracle", extraction_oracle),
        ("geometry oracles", geometry_oracles),
        ("rasterizer analytics", rasterizer_analytics),
        ("composition invariants", composition_invariants),
        ("placement statistics", placement_statistics),
        ("pose algebra", pose_algebra),
        ("annotations", annotation_checks),
        ("end-to-end determinism", end_to_end_determinism),
        ("parameter conformance", parameter_conformance),
        ("depth client", depth_client_suite),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({took:.1?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({took:.1?}): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
