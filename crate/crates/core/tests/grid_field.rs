use std::collections::{BTreeMap, BTreeSet};

use distgrid::field::{AppearanceTable, Cascade, FieldParams, FieldQuery, FieldTrace};
use distgrid::geom::{Aabb, Vec3};
use distgrid::grid::{GridConfig, HashGrid, Mapping};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(levels: usize, table_log2: u32, base: u32, max: u32) -> GridConfig {
    GridConfig {
        levels,
        table_length: 1 << table_log2,
        features_per_level: 2,
        base_resolution: base,
        max_resolution: max,
        aspect: [1.0; 3],
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn encode_backward_matches_table_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut grid = HashGrid::new(config(5, 9, 2, 40), &mut rng).unwrap();
    grid.fill_uniform(&mut rng, 1.0);
    for _ in 0..20 {
        let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        let up: Vec<f64> = (0..grid.output_width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut analytic: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for g in grid.encode_backward(p, &up).unwrap() {
            for (f, v) in g.grad.iter().enumerate() {
                *analytic.entry((g.level, g.row * 2 + f)).or_default() += v;
            }
        }
        // The encoding is linear in the tables, so one-sided differences are exact up to
        // rounding; probe every touched entry plus a few untouched ones.
        let mut probes: BTreeSet<(usize, usize)> = analytic.keys().copied().collect();
        for _ in 0..10 {
            let l = rng.gen_range(0..grid.levels.len());
            probes.insert((l, rng.gen_range(0..grid.levels[l].table.len())));
        }
        let base = dot(&grid.encode(p).unwrap(), &up);
        for (l, i) in probes {
            let h = 0.5;
            grid.levels[l].table[i] += h;
            let moved = dot(&grid.encode(p).unwrap(), &up);
            grid.levels[l].table[i] -= h;
            let fd = (moved - base) / h;
            let want = analytic.get(&(l, i)).copied().unwrap_or(0.0);
            assert!((fd - want).abs() < 1e-12, "level {l} entry {i}: {fd} vs {want}");
        }
    }
}

#[test]
fn dense_levels_give_every_vertex_its_own_row() {
    let grid = HashGrid::zeros(config(4, 12, 3, 12)).unwrap();
    let mut checked = 0;
    for level in &grid.levels {
        if level.mapping != Mapping::OneToOne {
            continue;
        }
        let [nx, ny, nz] = level.shape;
        let mut rows = BTreeSet::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    assert!(rows.insert(level.table_index([x, y, z]).unwrap()));
                }
            }
        }
        assert_eq!(rows.len(), level.rows());
        checked += 1;
    }
    assert!(checked >= 2);
}

#[test]
fn hashed_rows_stay_in_table() {
    let grid = HashGrid::zeros(config(3, 6, 8, 32)).unwrap();
    let level = grid.levels.last().unwrap();
    assert_eq!(level.mapping, Mapping::Hashed);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let v = [0, 1, 2].map(|a| rng.gen_range(0..level.shape[a]));
        assert!(level.table_index(v).unwrap() < level.rows());
    }
    assert!(level.table_index(level.shape).is_err());
}

/// Gradient of `a * sigma + b . rgb` against central differences on every parameter block.
#[test]
fn field_backward_matches_parameter_differences() {
    let bbox = Aabb::new(Vec3::new(-1.0, -2.0, 0.0), Vec3::new(1.0, 2.0, 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for cascade in [Cascade::Fine, Cascade::Coarse] {
        let mut field = FieldParams::with_width(cascade, bbox, config(4, 10, 4, 32), 3, 16, &mut rng).unwrap();
        for level in &mut field.grid.levels {
            for v in &mut level.table {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let table = AppearanceTable::precomputed(vec![vec![0.3, -0.2, 0.8], vec![-0.5, 0.1, 0.0]], 3).unwrap();
        let q = FieldQuery {
            point: Vec3::new(0.13, -0.71, 0.31),
            dir: Vec3::new(0.3, -0.4, -0.5).normalized(),
            appearance: 1,
        };
        let (a, b) = (0.7, [0.4, -1.1, 0.9]);
        let objective = |f: &FieldParams| {
            let mut tr = FieldTrace::default();
            let o = f.eval(&q, &table, &mut tr).unwrap();
            a * o.sigma + dot(&o.rgb, &b)
        };
        let mut trace = FieldTrace::default();
        field.eval(&q, &table, &mut trace).unwrap();
        let mut grad = field.zero_grad();
        field.backward_sample(&trace, a, b, &mut grad).unwrap();
        let analytic: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
        let mut checked = 0;
        let blocks = analytic.len();
        for block in 0..blocks {
            let len = analytic[block].len();
            let picks: Vec<usize> = if block < field.grid.levels.len() {
                // Table blocks are sparse: check the touched entries.
                (0..len).filter(|&i| analytic[block][i] != 0.0).take(6).collect()
            } else {
                (0..6).map(|_| rng.gen_range(0..len)).collect()
            };
            for i in picks {
                let h = 1e-6;
                field.params_mut()[block][i] += h;
                let up = objective(&field);
                field.params_mut()[block][i] -= 2.0 * h;
                let down = objective(&field);
                field.params_mut()[block][i] += h;
                let fd = (up - down) / (2.0 * h);
                let g = analytic[block][i];
                assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "{cascade:?} block {block} entry {i}: fd {fd} vs {g}");
                checked += 1;
            }
        }
        assert!(checked > 6 * (blocks - field.grid.levels.len()));
    }
}

proptest! {
    #[test]
    fn encoding_is_continuous_across_cells(p in prop::array::uniform3(0.0..1.0f64), axis in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut grid = HashGrid::new(config(4, 8, 3, 24), &mut rng).unwrap();
        grid.fill_uniform(&mut rng, 1.0);
        let mut q = p;
        q[axis] = (q[axis] + 1e-9).min(1.0);
        let a = grid.encode(Vec3(p)).unwrap();
        let b = grid.encode(Vec3(q)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            // Slope is bounded by the finest resolution times the table range.
            prop_assert!((x - y).abs() < 1e-7);
        }
    }
}
