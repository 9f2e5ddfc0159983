//! Uniform voxel-hash grid over a borrowed point set. Used for DBSCAN
//! neighborhoods and for nearest-neighbor correspondence in dynamic voting.

use rustc_hash::FxHashMap;

use crate::geometry::Vec3;

type CellKey = (i32, i32, i32);

pub struct SpatialHash<'a> {
    points: &'a [Vec3],
    cell: f64,
    inv_cell: f64,
    /// Point indices grouped by cell; `cells` maps a key to a range of it.
    order: Vec<u32>,
    cells: FxHashMap<CellKey, (u32, u32)>,
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let inv_cell = 1.0 / cell;
        let mut keyed: Vec<(CellKey, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (key_of(p, inv_cell), i as u32))
            .collect();
        keyed.sort_unstable();

        let mut cells = FxHashMap::default();
        cells.reserve(keyed.len() / 4 + 1);
        let mut start = 0usize;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            start = end;
        }
        SpatialHash {
            points,
            cell,
            inv_cell,
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            cells,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    #[inline]
    fn bucket(&self, key: CellKey) -> &[u32] {
        match self.cells.get(&key) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    /// Indices of all points within `radius` (inclusive) of `p`, ascending.
    pub fn within(&self, p: &Vec3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let reach = (radius * self.inv_cell).ceil() as i32;
        let (cx, cy, cz) = key_of(p, self.inv_cell);
        let r2 = radius * radius;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    for &i in self.bucket((cx + dx, cy + dy, cz + dz)) {
                        if (self.points[i as usize] - p).norm_squared() <= r2 {
                            out.push(i as usize);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// Closest point to `p` no farther than `max_radius`, with its distance.
    /// Ties resolve to the lowest index.
    pub fn nearest(&self, p: &Vec3, max_radius: f64) -> Option<(usize, f64)> {
        let (cx, cy, cz) = key_of(p, self.inv_cell);
        let max_ring = (max_radius * self.inv_cell).ceil() as i32 + 1;
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            // Everything in ring r is at least (r - 1) cells away.
            if let Some((_, d2)) = best {
                let bound = (ring - 1).max(0) as f64 * self.cell;
                if bound * bound > d2 {
                    break;
                }
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        for &i in self.bucket((cx + dx, cy + dy, cz + dz)) {
                            let d2 = (self.points[i as usize] - p).norm_squared();
                            let better = match best {
                                None => true,
                                Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                            };
                            if better {
                                best = Some((i as usize, d2));
                            }
                        }
                    }
                }
            }
        }
        best.filter(|&(_, d2)| d2 <= max_radius * max_radius)
            .map(|(i, d2)| (i, d2.sqrt()))
    }
}

#[inline]
fn key_of(p: &Vec3, inv_cell: f64) -> CellKey {
    (
        (p.x * inv_cell).floor() as i32,
        (p.y * inv_cell).floor() as i32,
        (p.z * inv_cell).floor() as i32,
    )
}
