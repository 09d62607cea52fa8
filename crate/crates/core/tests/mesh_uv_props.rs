use uvtex::mesh_uv::{build_texel_table, bundled_humanoid, surface_to_uv, Mesh};

/// Covered texels of the bundled humanoid at resolution 64.
const GOLDEN_COVERED_64: usize = 3600;

fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Euclidean distance from `p` to a filled triangle (0 inside).
fn dist_to_triangle(p: [f64; 2], tri: &[[f64; 2]; 3]) -> f64 {
    let side = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let s = [side(tri[0], tri[1]), side(tri[1], tri[2]), side(tri[2], tri[0])];
    if s.iter().all(|&v| v >= 0.0) || s.iter().all(|&v| v <= 0.0) {
        return 0.0;
    }
    (0..3).map(|i| dist_to_segment(p, tri[i], tri[(i + 1) % 3])).fold(f64::INFINITY, f64::min)
}

fn oracle_distance(mesh: &Mesh, p: [f64; 2]) -> f64 {
    mesh.uv_corners.iter().map(|t| dist_to_triangle(p, t)).fold(f64::INFINITY, f64::min)
}

#[test]
fn coverage_matches_point_in_triangle_oracle() {
    let mesh = bundled_humanoid();
    for r in [16usize, 64] {
        let table = build_texel_table(&mesh, r).unwrap();
        let half = 0.5 / r as f64;
        for row in 0..r {
            for col in 0..r {
                let c = [(col as f64 + 0.5) / r as f64, (row as f64 + 0.5) / r as f64];
                let d = oracle_distance(&mesh, c);
                let covered = table.entry(row, col).is_some();
                // Centers within rounding distance of the half-texel band are
                // ambiguous and skipped.
                if (d - half).abs() > 1e-9 {
                    assert_eq!(covered, d < half, "R {r} texel ({row}, {col}) at distance {d}");
                }
            }
        }
        if r == 64 {
            assert_eq!(table.covered_count(), GOLDEN_COVERED_64);
        }
    }
}

#[test]
fn entries_satisfy_barycentric_and_part_invariants() {
    let mesh = bundled_humanoid();
    for r in [8usize, 32, 64] {
        let table = build_texel_table(&mesh, r).unwrap();
        for (i, e) in table.entries.iter().enumerate() {
            match e {
                Some(e) => {
                    assert!(e.bary.iter().all(|&b| b >= -1e-6), "{:?}", e.bary);
                    assert!((e.bary.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                    assert_eq!(table.part_of_texel[i], Some(mesh.part_labels[e.face]));
                }
                None => assert_eq!(table.part_of_texel[i], None),
            }
        }
    }
}

#[test]
fn coarse_parts_survive_refinement() {
    let mesh = bundled_humanoid();
    let coarse = build_texel_table(&mesh, 4).unwrap().parts_present();
    let fine = build_texel_table(&mesh, 8).unwrap().parts_present();
    assert!(coarse.iter().all(|p| fine.contains(p)), "{coarse:?} vs {fine:?}");
    assert_eq!(build_texel_table(&mesh, 64).unwrap().parts_present(), vec![0, 1, 2, 3, 4, 5]);
}

#[test]
fn surface_to_uv_lands_near_texel_center() {
    let mesh = bundled_humanoid();
    for r in [16usize, 32, 64] {
        let table = build_texel_table(&mesh, r).unwrap();
        for row in 0..r {
            for col in 0..r {
                let Some(e) = table.entry(row, col) else { continue };
                let uv = surface_to_uv(&mesh, e.face, e.bary).unwrap();
                let (du, dv) = ((uv[0] * r as f64 - col as f64 - 0.5), (uv[1] * r as f64 - row as f64 - 0.5));
                let d = (du * du + dv * dv).sqrt();
                assert!(d <= std::f64::consts::FRAC_1_SQRT_2 + 1e-9, "R {r} ({row}, {col}): {d} texels");
            }
        }
    }
}
