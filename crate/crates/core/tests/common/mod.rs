#![allow(dead_code)]

use std::path::Path;

use nalgebra::{Matrix2, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatsynth::background::{write_pfm, BackgroundScene, DepthConvention, DepthMap, RawDepth, SupportPlane};
use splatsynth::extraction::ForegroundObject;
use splatsynth::geometry::ClusterLabel;
use splatsynth::imagebuf::RgbImage;
use splatsynth::renderer::{Camera, Intrinsics, Splat2D};
use splatsynth::splat_io::{Gaussian, SplatModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

pub fn dot(p: Vector3<f64>, rgb: [f64; 3], scale: f64, opacity: f64) -> Gaussian {
    Gaussian::with_color(p, Vector3::repeat(scale), UnitQuaternion::identity(), opacity, rgb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Plane,
    Object,
    Halo,
}

/// Labeled capture: 10k points on a tilted plane, a 2k-point ball resting
/// above it, and 500 floaters kept at least 1.6 from the ball.
pub struct ExtractionFixture {
    pub model: SplatModel,
    pub labels: Vec<Label>,
    pub normal: Vector3<f64>,
    pub object_center: Vector3<f64>,
}

pub fn extraction_fixture(seed: u64) -> ExtractionFixture {
    let mut r = rng(seed);
    let normal = Vector3::new(0.2, 1.0, 0.1).normalize();
    let (u, v) = basis(&normal);
    let center = normal * 0.9;
    let mut gaussians = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..10_000 {
        let p = u * r.random_range(-5.0..5.0) + v * r.random_range(-5.0..5.0);
        gaussians.push(dot(p, [0.4, 0.4, 0.4], 0.03, 0.9));
        labels.push(Label::Plane);
    }
    for _ in 0..2_000 {
        let p = center + random_unit(&mut r) * 0.6 * r.random::<f64>().cbrt();
        gaussians.push(dot(p, [0.9, 0.2, 0.1], 0.02, 0.9));
        labels.push(Label::Object);
    }
    let mut halo = 0;
    while halo < 500 {
        let p = u * r.random_range(-5.0..5.0) + v * r.random_range(-5.0..5.0) + normal * r.random_range(0.3..3.5);
        if (p - center).norm() < 1.6 {
            continue;
        }
        gaussians.push(dot(p, [0.5, 0.5, 0.9], 0.05, 0.3));
        labels.push(Label::Halo);
        halo += 1;
    }
    ExtractionFixture {
        model: SplatModel::new(gaussians, 0),
        labels,
        normal,
        object_center: center,
    }
}

/// Raw capture for end-to-end runs: a square ground plane plus an object of
/// `n_object` Gaussians (a colored box with a spherical cap).
pub fn capture_scene(n_plane: usize, n_object: usize, seed: u64, tint: [f64; 3]) -> SplatModel {
    let mut r = rng(seed);
    let mut gaussians = Vec::with_capacity(n_plane + n_object);
    for _ in 0..n_plane {
        let p = Vector3::new(r.random_range(-8.0..8.0), 0.0, r.random_range(-8.0..8.0));
        gaussians.push(dot(p, [0.5, 0.5, 0.45], 0.05, 0.9));
    }
    for i in 0..n_object {
        let p = if i % 3 == 0 {
            Vector3::new(0.0, 3.2, 0.0) + random_unit(&mut r) * 1.2 * r.random::<f64>().cbrt()
        } else {
            Vector3::new(r.random_range(-1.5..1.5), r.random_range(0.4..3.0), r.random_range(-1.0..1.0))
        };
        let shade = 0.6 + 0.4 * (p.y / 4.4);
        gaussians.push(dot(p, [tint[0] * shade, tint[1] * shade, tint[2] * shade], 0.05, 0.85));
    }
    SplatModel::new(gaussians, 0)
}

/// Canonical object (base at origin, up +y) made of small Gaussians in an
/// ellipsoid of the given half-extents, standing on y = 0.
pub fn canonical_blob(n: usize, half: Vector3<f64>, seed: u64, rgb: [f64; 3]) -> ForegroundObject {
    let mut r = rng(seed);
    let gaussians = (0..n)
        .map(|_| {
            let d = random_unit(&mut r) * r.random::<f64>().cbrt();
            let p = Vector3::new(d.x * half.x, (d.y + 1.0) * half.y, d.z * half.z);
            dot(p, rgb, 0.04 * half.max(), 0.9)
        })
        .collect();
    ForegroundObject {
        model: SplatModel::new(gaussians, 0),
        up: Vector3::y(),
        base_point: Vector3::zeros(),
        name: "blob".into(),
    }
}

/// Textured background with a given depth map and a level floor plane.
pub fn constructed_scene(width: usize, height: usize, depth: Vec<f32>, fov: f64) -> BackgroundScene {
    let mut image = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let c = if (x / 8 + y / 8) % 2 == 0 { 0.35 } else { 0.65 };
            image.set(x, y, [c, (x as f32 / width as f32) * 0.8, (y as f32 / height as f32) * 0.8]);
        }
    }
    BackgroundScene {
        image,
        depth: DepthMap {
            width,
            height,
            values: depth,
            convention: DepthConvention::Depth,
        },
        camera: Camera::identity(Intrinsics::from_fov(width, height, fov)).unwrap(),
        up_axis: Vector3::new(0.0, -1.0, 0.0),
        planes: vec![SupportPlane {
            normal: Vector3::new(0.0, -1.0, 0.0),
            offset: 1.0,
            inlier_points: vec![Vector3::new(0.0, 1.0, 5.0)],
            area: 1.0,
            up_alignment: 1.0,
        }],
        up_extent: 4.0,
    }
}

/// A room seen from a level camera: floor below, back wall at depth 10,
/// optionally a table top. Depth spans exactly [1, 10] so normalization is
/// the identity. Returns the image, the depth and the floor height.
pub fn room(width: usize, height: usize, table: bool, seed: u64) -> (RgbImage, RawDepth, f64) {
    let k = Intrinsics::from_fov(width, height, 55.0);
    let floor = ((height - 1) as f64 - k.cy) / k.fy;
    let table_y = floor * 0.55;
    let mut r = rng(seed);
    let hue = [r.random_range(0.3..0.8), r.random_range(0.3..0.8), r.random_range(0.3..0.8)];
    let mut image = RgbImage::new(width, height);
    let mut values = vec![0.0f32; width * height];
    for v in 0..height {
        for u in 0..width {
            let dx = (u as f64 - k.cx) / k.fx;
            let dy = (v as f64 - k.cy) / k.fy;
            let mut z = 10.0;
            let mut rgb = [hue[0] * 0.6, hue[1] * 0.6, hue[2] * 0.6];
            if dy > 0.0 && floor / dy < z {
                z = floor / dy;
                let (wx, wz) = (dx * z, z);
                let check = ((wx.floor() + wz.floor()) as i64).rem_euclid(2) as f64;
                rgb = [0.3 + 0.3 * check, 0.25 + 0.2 * check, 0.2];
            }
            if table && dy > 0.0 {
                let zt = table_y / dy;
                let wx = dx * zt;
                if zt < z && (3.0..6.0).contains(&zt) && (-2.5..-0.5).contains(&wx) {
                    z = zt;
                    rgb = [0.55, 0.35, 0.15];
                }
            }
            values[v * width + u] = z as f32;
            image.set(u, v, [rgb[0] as f32, rgb[1] as f32, rgb[2] as f32]);
        }
    }
    // pin the extremes so the [1, 10] rescale is exact
    values[(height - 1) * width] = 1.0;
    values[0] = 10.0;
    (image, RawDepth { width, height, values }, floor)
}

pub fn write_room(dir: &Path, stem: &str, width: usize, height: usize, table: bool, seed: u64) -> (String, String) {
    let (image, depth, _) = room(width, height, table, seed);
    let png = format!("{stem}.png");
    let pfm = format!("{stem}.pfm");
    image.save_png(dir.join(&png)).unwrap();
    write_pfm(std::fs::File::create(dir.join(&pfm)).unwrap(), width, height, &depth.values).unwrap();
    (png, pfm)
}

// ---------------------------------------------------------------- oracles

/// O(n²) DBSCAN with clusters numbered by lowest core index and each border
/// point given to the lowest-numbered cluster with a core point in reach.
pub fn brute_dbscan(points: &[Vector3<f64>], eps: f64, min_points: usize) -> Vec<ClusterLabel> {
    let n = points.len();
    let near = |i: usize, j: usize| (points[i] - points[j]).norm() <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_points).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut id_of_root = std::collections::HashMap::new();
    let mut core_id = vec![usize::MAX; n];
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            let next = id_of_root.len();
            core_id[i] = *id_of_root.entry(root).or_insert(next);
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                ClusterLabel::Cluster(core_id[i])
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| core_id[j])
                    .min()
                    .map_or(ClusterLabel::Noise, ClusterLabel::Cluster)
            }
        })
        .collect()
}

fn factorial(n: i32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Associated Legendre polynomial with the Condon–Shortley phase.
fn legendre(l: i32, m: i32, x: f64) -> f64 {
    let mut pmm = 1.0;
    if m > 0 {
        let s = (1.0 - x * x).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * s;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Real spherical harmonic `Y_l^m` in spherical coordinates.
pub fn real_sh(l: i32, m: i32, dir: &Vector3<f64>) -> f64 {
    let d = dir.normalize();
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x);
    let am = m.abs();
    let k = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = legendre(l, am, theta.cos());
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => k * p,
        std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).cos(),
        std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).sin(),
    }
}

/// Pinhole projection from first principles: `R` as a matrix, then `f·x/z + c`.
pub fn pinhole(cam: &Camera, p: &Vector3<f64>) -> Vector2<f64> {
    let m = cam.rotation.to_rotation_matrix().into_inner();
    let c = m * p + cam.translation;
    let k = &cam.intrinsics;
    Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy)
}

fn splat_alpha(s: &Splat2D, x: f64, y: f64) -> f64 {
    let d = Vector2::new(x - s.mean2d.x, y - s.mean2d.y);
    let c: &Matrix2<f64> = &s.conic;
    let power = -0.5 * (c[(0, 0)] * d.x * d.x + 2.0 * c[(0, 1)] * d.x * d.y + c[(1, 1)] * d.y * d.y);
    if power > 0.0 {
        return 0.0;
    }
    (s.opacity * power.exp()).min(0.99)
}

/// Per-pixel compositing over every splat, sorted globally by (depth, index).
/// Returns (premultiplied rgb, alpha) buffers.
pub fn brute_render(splats: &[(usize, Splat2D)], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<&(usize, Splat2D)> = splats.iter().collect();
    order.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    let mut color = vec![0.0; 3 * width * height];
    let mut alpha = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut t = 1.0;
            let i = y * width + x;
            for (_, s) in &order {
                let a = splat_alpha(s, x as f64, y as f64);
                if a < 1.0 / 255.0 {
                    continue;
                }
                if t * (1.0 - a) < 1e-4 {
                    break;
                }
                for c in 0..3 {
                    color[3 * i + c] += t * a * s.color[c];
                }
                alpha[i] += t * a;
                t *= 1.0 - a;
            }
        }
    }
    (color, alpha)
}

/// Median by full sort of each clamped window.
pub fn brute_median(values: &[f32], width: usize, height: usize, kernel: usize) -> Vec<f32> {
    let r = (kernel / 2) as i64;
    let mut out = Vec::with_capacity(values.len());
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut w = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, width as i64 - 1) as usize;
                    let sy = (y + dy).clamp(0, height as i64 - 1) as usize;
                    w.push(values[sy * width + sx]);
                }
            }
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(w[w.len() / 2]);
        }
    }
    out
}

/// Files below `root` with their bytes, sorted by relative path.
pub fn tree_snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Minimal scripted HTTP server for the depth client.
pub mod mock {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    #[derive(Debug, Clone)]
    pub enum Reply {
        Status(u16),
        Pfm { convention: String, body: Vec<u8> },
        Stall(Duration),
    }

    pub struct MockServer {
        pub url: String,
        pub requests: Arc<AtomicUsize>,
    }

    impl MockServer {
        pub fn count(&self) -> usize {
            self.requests.load(Ordering::SeqCst)
        }
    }

    fn read_request(stream: &mut TcpStream) -> std::io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut length = 0usize;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body)
    }

    /// Serves `script` in order, one reply per connection; the last reply repeats.
    pub fn serve(script: Vec<Reply>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let reply = script[n.min(script.len() - 1)].clone();
                thread::spawn(move || {
                    let _ = read_request(&mut stream);
                    let response = match reply {
                        Reply::Status(code) => {
                            format!("HTTP/1.1 {code} Oops\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").into_bytes()
                        }
                        Reply::Pfm { convention, body } => {
                            let mut r = format!(
                                "HTTP/1.1 200 OK\r\nContent-Type: application/x-pfm\r\nX-Depth-Convention: {convention}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                                body.len()
                            )
                            .into_bytes();
                            r.extend_from_slice(&body);
                            r
                        }
                        Reply::Stall(d) => {
                            thread::sleep(d);
                            Vec::new()
                        }
                    };
                    let _ = stream.write_all(&response);
                    let _ = stream.flush();
                });
            }
        });
        MockServer { url, requests }
    }
}
