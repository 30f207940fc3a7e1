use std::collections::{BTreeMap, HashMap, VecDeque};

use super::{MeshError, TriMesh};

/// Closed, simple cycle of boundary vertices, ordered along the direction of
/// the triangle edges that produce it (counter-clockwise when the incident
/// faces are seen from the side their normals point to).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryLoop {
    pub vertices: Vec<usize>,
}

impl BoundaryLoop {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Directed edges `(v[i], v[i+1])`, closing back to the first vertex.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

/// Extracts every boundary component of an edge-manifold mesh.
///
/// Boundary edges are those used by exactly one triangle. Vertices where
/// several boundary components touch are split so that each returned loop is
/// simple. Loops are emitted in ascending order of their smallest directed
/// edge, which makes the output deterministic.
pub fn boundary_loops(mesh: &TriMesh) -> Result<Vec<BoundaryLoop>, MeshError> {
    // undirected edge -> (use count, directed edge of the first use)
    let mut incidence: HashMap<(usize, usize), (u32, (usize, usize))> = HashMap::new();
    for tri in mesh.triangles() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let e = incidence.entry((a.min(b), a.max(b))).or_insert((0, (a, b)));
            e.0 += 1;
            if e.0 > 2 {
                return Err(MeshError::NonManifoldEdge(a.min(b), a.max(b)));
            }
        }
    }
    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(count, (a, b)) in incidence.values() {
        if count == 1 {
            outgoing.entry(a).or_default().push(b);
        }
    }
    for targets in outgoing.values_mut() {
        targets.sort_unstable_by(|x, y| y.cmp(x));
    }

    let mut loops = Vec::new();
    while let Some((&start, _)) = outgoing.iter().find(|(_, t)| !t.is_empty()) {
        // walk until we return to the start vertex
        let mut walk = vec![start];
        let mut cur = start;
        loop {
            let next = match outgoing.get_mut(&cur).and_then(|t| t.pop()) {
                Some(n) => n,
                None => break,
            };
            if next == start {
                break;
            }
            walk.push(next);
            cur = next;
        }
        split_simple_cycles(walk, &mut loops);
    }
    loops.sort_by_key(|l: &BoundaryLoop| *l.vertices.iter().min().unwrap_or(&0));
    Ok(loops)
}

fn split_simple_cycles(walk: Vec<usize>, out: &mut Vec<BoundaryLoop>) {
    let mut stack: Vec<usize> = Vec::with_capacity(walk.len());
    let mut position: HashMap<usize, usize> = HashMap::new();
    for v in walk {
        if let Some(&p) = position.get(&v) {
            let cycle: Vec<usize> = stack.drain(p..).collect();
            for u in &cycle {
                position.remove(u);
            }
            if cycle.len() >= 3 {
                out.push(BoundaryLoop { vertices: cycle });
            }
        }
        position.insert(v, stack.len());
        stack.push(v);
    }
    if stack.len() >= 3 {
        out.push(BoundaryLoop { vertices: stack });
    }
}

/// All vertices within `rings` edge hops of any vertex of `boundary`, sorted.
pub fn select_near_boundary(
    mesh: &TriMesh,
    boundary: &BoundaryLoop,
    rings: usize,
) -> Result<Vec<usize>, MeshError> {
    let neighbors = mesh.vertex_neighbors();
    let mut depth = vec![usize::MAX; mesh.vertex_count()];
    let mut queue = VecDeque::new();
    for &v in &boundary.vertices {
        if v >= depth.len() {
            return Err(MeshError::InvalidVertex(v));
        }
        if depth[v] == usize::MAX {
            depth[v] = 0;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        if depth[v] == rings {
            continue;
        }
        for &n in &neighbors[v] {
            if depth[n] == usize::MAX {
                depth[n] = depth[v] + 1;
                queue.push_back(n);
            }
        }
    }
    Ok((0..depth.len()).filter(|&v| depth[v] != usize::MAX).collect())
}
