//! Built-in maps: the 35x21 small warehouse, a 32x32 random map with 10%
//! obstacles, and small random maps for fuzzing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Cell, CellKind, GridMap};

const WAREHOUSE_W: u32 = 35;
const WAREHOUSE_H: u32 = 21;

/// 35x21 warehouse: a four-column parking strip on each side, a 2x5 grid of
/// ten-cell shelves split by two-column side aisles and a three-column middle
/// aisle, task endpoints directly above and below every shelf.
pub fn small_warehouse() -> GridMap {
    let mut map = GridMap::empty(WAREHOUSE_W, WAREHOUSE_H);
    for y in 0..WAREHOUSE_H {
        for x in [0, WAREHOUSE_W - 1] {
            map.set_kind(Cell::new(x, y), CellKind::NonTaskEndpoint);
        }
        if y % 2 == 1 {
            for x in [2, WAREHOUSE_W - 3] {
                map.set_kind(Cell::new(x, y), CellKind::NonTaskEndpoint);
            }
        }
    }
    for shelf_y in (2..WAREHOUSE_H).step_by(4) {
        for x in (6..16).chain(19..29) {
            map.set_kind(Cell::new(x, shelf_y), CellKind::Obstacle);
            map.set_kind(Cell::new(x, shelf_y - 1), CellKind::TaskEndpoint);
            map.set_kind(Cell::new(x, shelf_y + 1), CellKind::TaskEndpoint);
        }
    }
    map
}

/// 32x32 map with 10% random obstacles (largest component kept). Every free
/// cell is a task endpoint except `n_parking` spread-out parking cells.
pub fn random_32_32_10(seed: u64, n_parking: usize) -> GridMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = random_obstacles(32, 32, 0.10, &mut rng);
    let mut free: Vec<Cell> = map.passable_cells().collect();
    free.shuffle(&mut rng);
    for &c in free.iter().take(n_parking) {
        map.set_kind(c, CellKind::NonTaskEndpoint);
    }
    for c in free.into_iter().skip(n_parking) {
        map.set_kind(c, CellKind::TaskEndpoint);
    }
    map
}

/// Obstacles with the given density; cells outside the largest free
/// component become obstacles too.
pub fn random_obstacles(width: u32, height: u32, density: f64, rng: &mut impl Rng) -> GridMap {
    let mut map = GridMap::empty(width, height);
    for c in map.cells().collect::<Vec<_>>() {
        if rng.gen_bool(density) {
            map.set_kind(c, CellKind::Obstacle);
        }
    }
    keep_largest_component(&mut map);
    map
}

fn keep_largest_component(map: &mut GridMap) {
    let mut label = vec![usize::MAX; map.len()];
    let mut sizes = Vec::new();
    for start in map.passable_cells().collect::<Vec<_>>() {
        if label[map.index(start)] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        label[map.index(start)] = id;
        let mut size = 0;
        while let Some(c) = stack.pop() {
            size += 1;
            map.for_each_neighbor(c, |n| {
                if label[map.index(n)] == usize::MAX {
                    label[map.index(n)] = id;
                    stack.push(n);
                }
            });
        }
        sizes.push(size);
    }
    let Some(best) = (0..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))) else {
        return;
    };
    for c in map.cells().collect::<Vec<_>>() {
        let l = label[map.index(c)];
        if l != usize::MAX && l != best {
            map.set_kind(c, CellKind::Obstacle);
        }
    }
}

/// A small random instance shape for fuzzing.
#[derive(Debug, Clone)]
pub struct FuzzMap {
    pub map: GridMap,
    pub agents: usize,
}

/// Random map of at most `max_side` x `max_side` with scattered task
/// endpoints and at least `agents` parking cells when space allows. Endpoints
/// are placed apart from each other, so many (not all) draws are well-formed.
pub fn fuzz_map(rng: &mut impl Rng, max_side: u32, agents: usize) -> FuzzMap {
    let w = rng.gen_range(6..=max_side.max(6));
    let h = rng.gen_range(6..=max_side.max(6));
    let density = rng.gen_range(0.0..0.2);
    let mut map = random_obstacles(w, h, density, rng);
    let mut free: Vec<Cell> = map.passable_cells().collect();
    free.shuffle(rng);
    let n_tasks = rng.gen_range(4..=12usize);
    let n_parking = agents + rng.gen_range(0..=4usize);
    // Spaced placement first; cramped maps fall back to any free cell.
    let mut placed: Vec<Cell> = Vec::new();
    for (kind, count) in [
        (CellKind::TaskEndpoint, n_tasks),
        (CellKind::NonTaskEndpoint, n_parking),
    ] {
        let mut n = 0;
        for spaced in [true, false] {
            for &c in &free {
                if n == count {
                    break;
                }
                if map.kind(c) != CellKind::Free
                    || spaced && placed.iter().any(|&p| p.chebyshev(c) < 2)
                {
                    continue;
                }
                map.set_kind(c, kind);
                placed.push(c);
                n += 1;
            }
        }
    }
    FuzzMap { map, agents }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::check_well_formed;
    use crate::instance::{parse_map, serialize_map};

    #[test]
    fn warehouse_shape() {
        let map = small_warehouse();
        assert_eq!((map.width(), map.height()), (35, 21));
        assert_eq!(map.task_endpoints().len(), 2 * 5 * 2 * 10);
        assert_eq!(map.non_task_endpoints().len(), 2 * 21 + 2 * 10);
        assert_eq!(
            map.kinds()
                .iter()
                .filter(|k| **k == CellKind::Obstacle)
                .count(),
            100
        );
        assert!(check_well_formed(&map, 50).ok);
    }

    #[test]
    fn shipped_warehouse_file_matches() {
        let path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../maps/small-warehouse.map"
        );
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(parse_map(&text).unwrap(), small_warehouse());
        assert_eq!(serialize_map(&small_warehouse()), text);
    }

    #[test]
    fn random_map_is_connected_with_parking() {
        let map = random_32_32_10(3, 60);
        assert_eq!(map.passable_components(), 1);
        assert_eq!(map.non_task_endpoints().len(), 60);
        let free = map.passable_count();
        assert!(free > 32 * 32 * 8 / 10, "{free}");
    }

    #[test]
    fn fuzz_maps_are_small_and_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let f = fuzz_map(&mut rng, 20, 5);
            assert!(f.map.width() <= 20 && f.map.height() <= 20);
            assert_eq!(f.map.passable_components(), 1);
            assert!(f.map.task_endpoints().len() >= 2);
        }
    }
}
