//! Label-image smoothing: Potts-energy evaluation, alpha-expansion moves via
//! max-flow/min-cut, segment erosion with size thresholds, and edge erosion.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::Error;
use crate::rng::rng_from;
use crate::scalar::{real, Real};
use crate::Result;

/// Per-pixel, per-class data costs, stored in `(row, col, class)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume<T> {
    height: usize,
    width: usize,
    nclasses: usize,
    costs: Vec<T>,
}

impl<T: Real> CostVolume<T> {
    pub fn new(height: usize, width: usize, nclasses: usize, costs: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || nclasses == 0 {
            return Err(Error::Contract("empty cost volume".into()));
        }
        if costs.len() != height * width * nclasses {
            return Err(Error::Contract("cost buffer size mismatch".into()));
        }
        if costs.iter().any(|c| !c.is_finite() || *c < T::zero()) {
            return Err(Error::Contract("costs must be finite and >= 0".into()));
        }
        Ok(Self {
            height,
            width,
            nclasses,
            costs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn nclasses(&self) -> usize {
        self.nclasses
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, class: usize) -> T {
        self.costs[(r * self.width + c) * self.nclasses + class]
    }

    pub fn costs(&self) -> &[T] {
        &self.costs
    }

    /// Cheapest class at a pixel, ties to the smallest index.
    pub fn argmin_at(&self, r: usize, c: usize) -> usize {
        let mut best = 0;
        for class in 1..self.nclasses {
            if self.get(r, c, class) < self.get(r, c, best) {
                best = class;
            }
        }
        best
    }

    /// Per-pixel argmin labeling.
    pub fn argmin_labels(&self) -> LabelImage {
        let mut labels = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                labels.push(self.argmin_at(r, c));
            }
        }
        LabelImage::new(self.height, self.width, labels).unwrap()
    }

    /// Writes the flat binary format: magic `CVOL`, then height, width and
    /// class count as 32-bit little-endian unsigned, then the costs as 64-bit
    /// little-endian floats in `(row, col, class)` order.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(b"CVOL")?;
        f.write_all(&(self.height as u32).to_le_bytes())?;
        f.write_all(&(self.width as u32).to_le_bytes())?;
        f.write_all(&(self.nclasses as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.costs.len() * 8);
        for v in &self.costs {
            buf.extend_from_slice(&v.to_f64().expect("finite cost").to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[0..4] != b"CVOL" {
            return Err(Error::FileFormat("not a cost-volume file".into()));
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let n = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(c))
            .ok_or_else(|| Error::FileFormat("dimensions overflow".into()))?;
        if bytes.len() != 16 + 8 * n {
            return Err(Error::FileFormat("cost-volume payload truncated".into()));
        }
        let mut costs = Vec::with_capacity(n);
        for i in 0..n {
            let off = 16 + 8 * i;
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            costs.push(T::from(v).ok_or_else(|| Error::FileFormat("bad float".into()))?);
        }
        Self::new(h, w, c, costs)
    }
}

/// Per-pixel class assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl LabelImage {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Contract("label buffer size mismatch".into()));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> usize {
        self.labels[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, l: usize) {
        self.labels[r * self.width + c] = l;
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gray image whose pixel value is the class index.
    pub fn to_gray(&self) -> Result<crate::imageio::GrayImage> {
        if self.labels.iter().any(|&l| l > 255) {
            return Err(Error::Contract("more than 256 classes".into()));
        }
        crate::imageio::GrayImage::new(
            self.height,
            self.width,
            self.labels.iter().map(|&l| l as u8).collect(),
        )
    }

    pub fn from_gray(img: &crate::imageio::GrayImage) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            labels: img.pixels().iter().map(|&p| p as usize).collect(),
        }
    }
}

/// Potts energy: selected data costs plus `u` per 4-neighbor pair with
/// disagreeing labels.
pub fn energy<T: Real>(f: &LabelImage, cv: &CostVolume<T>, u: T) -> T {
    assert_eq!(f.height(), cv.height());
    assert_eq!(f.width(), cv.width());
    let mut data = T::zero();
    let mut cuts = 0usize;
    for r in 0..f.height() {
        for c in 0..f.width() {
            data += cv.get(r, c, f.get(r, c));
            if r + 1 < f.height() && f.get(r, c) != f.get(r + 1, c) {
                cuts += 1;
            }
            if c + 1 < f.width() && f.get(r, c) != f.get(r, c + 1) {
                cuts += 1;
            }
        }
    }
    data + u * real(cuts as f64)
}

// ---------------------------------------------------------------------------
// Max flow
// ---------------------------------------------------------------------------

/// Directed flow network with distinguished source and sink.
#[derive(Debug, Clone)]
pub struct FlowNetwork<T> {
    nnodes: usize,
    source: usize,
    sink: usize,
    to: Vec<u32>,
    cap: Vec<T>,
    adj: Vec<Vec<u32>>,
}

impl<T: Real> FlowNetwork<T> {
    pub fn new(nnodes: usize, source: usize, sink: usize) -> Self {
        assert!(source < nnodes && sink < nnodes && source != sink);
        Self {
            nnodes,
            source,
            sink,
            to: Vec::new(),
            cap: Vec::new(),
            adj: vec![Vec::new(); nnodes],
        }
    }

    pub fn nnodes(&self) -> usize {
        self.nnodes
    }

    /// Directed arc `from -> to`; the paired reverse arc gets `rev_cap`
    /// (zero for a one-way arc, equal for an undirected edge).
    pub fn add_arc(&mut self, from: usize, to: usize, cap: T, rev_cap: T) {
        debug_assert!(cap >= T::zero() && rev_cap >= T::zero());
        let e = self.to.len() as u32;
        self.to.push(to as u32);
        self.cap.push(cap);
        self.to.push(from as u32);
        self.cap.push(rev_cap);
        self.adj[from].push(e);
        self.adj[to].push(e + 1);
    }
}

/// Max-flow value and the min-cut partition (`true` = source side).
pub struct MaxFlowCut<T> {
    pub value: T,
    pub source_side: Vec<bool>,
}

/// Dinic's algorithm: BFS level graph plus blocking-flow DFS. Exact on
/// integer-valued capacities; every augmentation saturates an arc, so the
/// float case terminates as well.
pub fn maxflow<T: Real>(net: &FlowNetwork<T>) -> MaxFlowCut<T> {
    let n = net.nnodes;
    let mut residual = net.cap.clone();
    let mut level = vec![-1i32; n];
    let mut iter = vec![0usize; n];
    let mut queue = Vec::with_capacity(n);
    let mut value = T::zero();

    loop {
        // BFS levels over residual arcs.
        level.fill(-1);
        queue.clear();
        queue.push(net.source);
        level[net.source] = 0;
        let mut qi = 0;
        while qi < queue.len() {
            let v = queue[qi];
            qi += 1;
            for &e in &net.adj[v] {
                let e = e as usize;
                let w = net.to[e] as usize;
                if residual[e] > T::zero() && level[w] < 0 {
                    level[w] = level[v] + 1;
                    queue.push(w);
                }
            }
        }
        if level[net.sink] < 0 {
            break;
        }
        iter.fill(0);

        // Blocking flow via iterative DFS.
        loop {
            let mut path: Vec<usize> = Vec::new();
            let mut v = net.source;
            let bottleneck;
            'walk: loop {
                if v == net.sink {
                    let mut b = T::infinity();
                    for &e in &path {
                        if residual[e] < b {
                            b = residual[e];
                        }
                    }
                    bottleneck = Some(b);
                    break 'walk;
                }
                let mut advanced = false;
                while iter[v] < net.adj[v].len() {
                    let e = net.adj[v][iter[v]] as usize;
                    let w = net.to[e] as usize;
                    if residual[e] > T::zero() && level[w] == level[v] + 1 {
                        path.push(e);
                        v = w;
                        advanced = true;
                        break;
                    }
                    iter[v] += 1;
                }
                if !advanced {
                    level[v] = -1;
                    match path.pop() {
                        Some(e) => v = net.to[e ^ 1] as usize,
                        None => {
                            bottleneck = None;
                            break 'walk;
                        }
                    }
                }
            }
            match bottleneck {
                None => break,
                Some(b) => {
                    for &e in &path {
                        residual[e] -= b;
                        residual[e ^ 1] += b;
                    }
                    value += b;
                }
            }
        }
    }

    // Source side of the min cut: nodes reachable in the final residual.
    let mut source_side = vec![false; n];
    queue.clear();
    queue.push(net.source);
    source_side[net.source] = true;
    let mut qi = 0;
    while qi < queue.len() {
        let v = queue[qi];
        qi += 1;
        for &e in &net.adj[v] {
            let e = e as usize;
            let w = net.to[e] as usize;
            if residual[e] > T::zero() && !source_side[w] {
                source_side[w] = true;
                queue.push(w);
            }
        }
    }
    MaxFlowCut { value, source_side }
}

// ---------------------------------------------------------------------------
// Alpha expansion
// ---------------------------------------------------------------------------

/// Best move letting every pixel either keep its label or switch to
/// `alpha_label`, solved exactly as a min cut on the expansion graph
/// (source side = keep, sink side = alpha; one auxiliary node per neighbor
/// pair with differing current labels). Never increases the energy; ties
/// keep the input labeling.
pub fn expand<T: Real>(
    f: &LabelImage,
    alpha_label: usize,
    cv: &CostVolume<T>,
    u: T,
) -> LabelImage {
    let (h, w) = (f.height(), f.width());
    assert!(alpha_label < cv.nclasses());
    let npix = h * w;

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if r + 1 < h {
                pairs.push((r * w + c, (r + 1) * w + c));
            }
            if c + 1 < w {
                pairs.push((r * w + c, r * w + c + 1));
            }
        }
    }
    // Pin value: larger than any feasible cut.
    let mut pin = T::one();
    for r in 0..h {
        for c in 0..w {
            pin += cv.get(r, c, alpha_label) + cv.get(r, c, f.get(r, c));
        }
    }
    pin += u * real(3.0 * pairs.len() as f64);

    let aux = pairs
        .iter()
        .filter(|&&(p, q)| f.labels()[p] != f.labels()[q])
        .count();
    let mut net = FlowNetwork::new(2 + npix + aux, 0, 1);
    for r in 0..h {
        for c in 0..w {
            let p = 2 + r * w + c;
            let keep_cost = if f.get(r, c) == alpha_label {
                pin // keeping equals switching; forbid the keep side
            } else {
                cv.get(r, c, f.get(r, c))
            };
            net.add_arc(0, p, cv.get(r, c, alpha_label), T::zero());
            net.add_arc(p, 1, keep_cost, T::zero());
        }
    }
    let mut next_aux = 2 + npix;
    let potts = |a: usize, b: usize| if a == b { T::zero() } else { u };
    for &(p, q) in &pairs {
        let (fp, fq) = (f.labels()[p], f.labels()[q]);
        if fp == fq {
            if u > T::zero() {
                net.add_arc(2 + p, 2 + q, u, u);
            }
        } else {
            let a = next_aux;
            next_aux += 1;
            let c_pa = potts(fp, alpha_label);
            let c_aq = potts(alpha_label, fq);
            let c_at = potts(fp, fq);
            if c_pa > T::zero() {
                net.add_arc(2 + p, a, c_pa, c_pa);
            }
            if c_aq > T::zero() {
                net.add_arc(a, 2 + q, c_aq, c_aq);
            }
            if c_at > T::zero() {
                net.add_arc(a, 1, c_at, T::zero());
            }
        }
    }

    let cut = maxflow(&net);
    let mut labels = f.labels().to_vec();
    for (i, l) in labels.iter_mut().enumerate() {
        if !cut.source_side[2 + i] {
            *l = alpha_label;
        }
    }
    let candidate = LabelImage::new(h, w, labels).unwrap();
    if energy(&candidate, cv, u) < energy(f, cv, u) {
        candidate
    } else {
        f.clone()
    }
}

/// Full alpha-expansion: start from the per-pixel argmin labeling and cycle
/// over all labels in a fresh random order per cycle until a whole cycle
/// brings no strict energy decrease. Also returns the energy trace (initial
/// energy, then one entry per expansion move).
pub fn alpha_expansion_traced<T: Real>(
    cv: &CostVolume<T>,
    u: T,
    seed: u64,
) -> (LabelImage, Vec<T>) {
    let mut rng = rng_from(seed);
    let mut f = cv.argmin_labels();
    let mut trace = vec![energy(&f, cv, u)];
    let eps = real::<T>(1e-12);
    loop {
        let before = *trace.last().unwrap();
        let mut order: Vec<usize> = (0..cv.nclasses()).collect();
        order.shuffle(&mut rng);
        for alpha_label in order {
            f = expand(&f, alpha_label, cv, u);
            trace.push(energy(&f, cv, u));
        }
        let after = *trace.last().unwrap();
        if before - after <= eps {
            break;
        }
    }
    (f, trace)
}

/// [`alpha_expansion_traced`] without the trace.
pub fn alpha_expansion<T: Real>(cv: &CostVolume<T>, u: T, seed: u64) -> LabelImage {
    alpha_expansion_traced(cv, u, seed).0
}

// ---------------------------------------------------------------------------
// Segments and erosion
// ---------------------------------------------------------------------------

/// A 4-connected group of equal-label pixels (row-major pixel indices).
#[derive(Debug, Clone)]
pub struct Segment {
    pub label: usize,
    pub pixels: Vec<usize>,
}

/// 4-connected components of equal-label pixels, discovered in scan order.
pub fn segments(f: &LabelImage) -> Vec<Segment> {
    let (h, w) = (f.height(), f.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        let label = f.labels()[start];
        let mut pixels = vec![start];
        seen[start] = true;
        let mut qi = 0;
        while qi < pixels.len() {
            let p = pixels[qi];
            qi += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize, seen: &mut Vec<bool>, pixels: &mut Vec<usize>| {
                if !seen[q] && f.labels()[q] == label {
                    seen[q] = true;
                    pixels.push(q);
                }
            };
            if r > 0 {
                visit(p - w, &mut seen, &mut pixels);
            }
            if r + 1 < h {
                visit(p + w, &mut seen, &mut pixels);
            }
            if c > 0 {
                visit(p - 1, &mut seen, &mut pixels);
            }
            if c + 1 < w {
                visit(p + 1, &mut seen, &mut pixels);
            }
        }
        out.push(Segment { label, pixels });
    }
    out
}

fn neighbors(p: usize, h: usize, w: usize) -> [Option<usize>; 4] {
    let (r, c) = (p / w, p % w);
    [
        (r > 0).then(|| p - w),
        (r + 1 < h).then(|| p + w),
        (c > 0).then(|| p - 1),
        (c + 1 < w).then(|| p + 1),
    ]
}

/// Consumes a segment by peeling boundary pixels one by one, each adopting
/// the cheapest adjacent foreign label. A segment covering the whole image
/// has no foreign neighbor and is left alone.
fn erode_segment<T: Real>(f: &mut LabelImage, pixels: &[usize], cv: &CostVolume<T>) {
    let (h, w) = (f.height(), f.width());
    let mut inside = vec![false; h * w];
    for &p in pixels {
        inside[p] = true;
    }
    let mut remaining: Vec<usize> = pixels.to_vec();
    remaining.sort_unstable();
    while !remaining.is_empty() {
        let boundary: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&p| neighbors(p, h, w).iter().flatten().any(|&q| !inside[q]))
            .collect();
        if boundary.is_empty() {
            return;
        }
        for &p in &boundary {
            let (r, c) = (p / w, p % w);
            let mut best: Option<usize> = None;
            for q in neighbors(p, h, w).into_iter().flatten() {
                if inside[q] {
                    continue;
                }
                let l = f.labels()[q];
                let better = match best {
                    None => true,
                    Some(b) => {
                        cv.get(r, c, l) < cv.get(r, c, b)
                            || (cv.get(r, c, l) == cv.get(r, c, b) && l < b)
                    }
                };
                if better {
                    best = Some(l);
                }
            }
            if let Some(l) = best {
                f.set(r, c, l);
                inside[p] = false;
            }
        }
        remaining.retain(|&p| inside[p]);
    }
}

/// Segment erosion with size thresholds, smallest segments first: segments
/// below `small` are always eroded, segments above `big` never, and segments
/// in between keep the erosion only when it strictly decreases the energy
/// computed with the erosion weight `lam`.
pub fn alpha_erosion<T: Real>(
    f: &LabelImage,
    cv: &CostVolume<T>,
    lam: T,
    small: usize,
    big: usize,
) -> LabelImage {
    assert!(small <= big, "small threshold must not exceed big");
    let mut segs = segments(f);
    segs.sort_by_key(|s| (s.pixels.len(), s.pixels[0]));
    let mut out = f.clone();
    for seg in &segs {
        let size = seg.pixels.len();
        if size > big {
            continue;
        }
        if size < small {
            erode_segment(&mut out, &seg.pixels, cv);
        } else {
            let mut trial = out.clone();
            erode_segment(&mut trial, &seg.pixels, cv);
            if energy(&trial, cv, lam) < energy(&out, cv, lam) {
                out = trial;
            }
        }
    }
    out
}

/// Reassigns every pixel within `depth` (Chebyshev) of a label boundary to
/// the cheapest label present in its `(2 depth + 1)^2` neighborhood; interior
/// pixels are untouched. All decisions read the input labeling.
pub fn edge_erosion<T: Real>(f: &LabelImage, cv: &CostVolume<T>, depth: usize) -> LabelImage {
    if depth == 0 {
        return f.clone();
    }
    let (h, w) = (f.height(), f.width());
    let d = depth as isize;
    let mut out = f.clone();
    for r in 0..h as isize {
        for c in 0..w as isize {
            let me = f.get(r as usize, c as usize);
            let mut near_boundary = false;
            for rr in (r - d).max(0)..=(r + d).min(h as isize - 1) {
                for cc in (c - d).max(0)..=(c + d).min(w as isize - 1) {
                    if f.get(rr as usize, cc as usize) != me {
                        near_boundary = true;
                    }
                }
            }
            if !near_boundary {
                continue;
            }
            let mut best = me;
            let mut best_cost = cv.get(r as usize, c as usize, me);
            for rr in (r - d).max(0)..=(r + d).min(h as isize - 1) {
                for cc in (c - d).max(0)..=(c + d).min(w as isize - 1) {
                    let l = f.get(rr as usize, cc as usize);
                    let cost = cv.get(r as usize, c as usize, l);
                    if cost < best_cost || (cost == best_cost && l < best) {
                        best = l;
                        best_cost = cost;
                    }
                }
            }
            out.set(r as usize, c as usize, best);
        }
    }
    out
}
