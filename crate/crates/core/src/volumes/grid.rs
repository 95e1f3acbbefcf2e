use super::VolumeError;

/// Voxel grid in z-major order: `index = (z * ny + y) * nx + x`, with
/// `dims = [nz, ny, nx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy> VoxelGrid<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self, VolumeError> {
        if dims.contains(&0) || dims.iter().product::<usize>() != data.len() {
            return Err(VolumeError::GridSize {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    /// `(z, y, x)` coordinates of a flat index.
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        [i / (self.dims[1] * self.dims[2]), y, x]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> VoxelGrid<U> {
        VoxelGrid {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mid-plane axial slice (fixed z) as rows of x.
    pub fn axial_slice(&self, z: usize) -> Vec<Vec<T>> {
        (0..self.dims[1])
            .map(|y| (0..self.dims[2]).map(|x| self.get(z, y, x)).collect())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    Trilinear,
    Nearest,
}

fn check_target(target: [usize; 3], src: [usize; 3]) -> Result<(), VolumeError> {
    if target.iter().chain(src.iter()).any(|&n| n < 2) {
        return Err(VolumeError::ResampleDims { from: src, target });
    }
    Ok(())
}

/// Align-corners source coordinate of target index `i`.
#[inline]
fn source_pos(i: usize, src: usize, dst: usize) -> f64 {
    (i * (src - 1)) as f64 / (dst - 1) as f64
}

/// Trilinear resampling with aligned corner voxel centers.
pub fn resample_trilinear(grid: &VoxelGrid<f32>, target: [usize; 3]) -> Result<VoxelGrid<f32>, VolumeError> {
    let src = grid.dims();
    check_target(target, src)?;
    let axis = |a: usize| -> Vec<(usize, usize, f64)> {
        (0..target[a])
            .map(|i| {
                let p = source_pos(i, src[a], target[a]);
                let lo = (p.floor() as usize).min(src[a] - 1);
                let hi = (lo + 1).min(src[a] - 1);
                (lo, hi, p - lo as f64)
            })
            .collect()
    };
    let (az, ay, ax) = (axis(0), axis(1), axis(2));
    let mut out = Vec::with_capacity(target.iter().product());
    for &(z0, z1, fz) in &az {
        for &(y0, y1, fy) in &ay {
            for &(x0, x1, fx) in &ax {
                let g = |z, y, x| grid.get(z, y, x) as f64;
                let c00 = g(z0, y0, x0) * (1.0 - fx) + g(z0, y0, x1) * fx;
                let c01 = g(z0, y1, x0) * (1.0 - fx) + g(z0, y1, x1) * fx;
                let c10 = g(z1, y0, x0) * (1.0 - fx) + g(z1, y0, x1) * fx;
                let c11 = g(z1, y1, x0) * (1.0 - fx) + g(z1, y1, x1) * fx;
                let c0 = c00 * (1.0 - fy) + c01 * fy;
                let c1 = c10 * (1.0 - fy) + c11 * fy;
                out.push((c0 * (1.0 - fz) + c1 * fz) as f32);
            }
        }
    }
    VoxelGrid::new(target, out)
}

/// Nearest-neighbour resampling; output values are always drawn from the input.
pub fn resample_nearest<T: Copy>(grid: &VoxelGrid<T>, target: [usize; 3]) -> Result<VoxelGrid<T>, VolumeError> {
    let src = grid.dims();
    check_target(target, src)?;
    let axis = |a: usize| -> Vec<usize> {
        (0..target[a])
            .map(|i| (source_pos(i, src[a], target[a]).round() as usize).min(src[a] - 1))
            .collect()
    };
    let (az, ay, ax) = (axis(0), axis(1), axis(2));
    let mut out = Vec::with_capacity(target.iter().product());
    for &z in &az {
        for &y in &ay {
            for &x in &ax {
                out.push(grid.get(z, y, x));
            }
        }
    }
    VoxelGrid::new(target, out)
}

pub fn resample(grid: &VoxelGrid<f32>, target: [usize; 3], mode: ResampleMode) -> Result<VoxelGrid<f32>, VolumeError> {
    match mode {
        ResampleMode::Trilinear => resample_trilinear(grid, target),
        ResampleMode::Nearest => resample_nearest(grid, target),
    }
}

/// Clip Hounsfield units to `[level − width/2, level + width/2]` and map
/// linearly onto `[0, 1]`.
pub fn window_normalize_value(hu: f32, width: f32, level: f32) -> f32 {
    let lo = level - width / 2.0;
    let hi = level + width / 2.0;
    (hu.clamp(lo, hi) - lo) / width
}

pub fn window_normalize(ct: &VoxelGrid<f32>, width: f32, level: f32) -> Result<VoxelGrid<f32>, VolumeError> {
    if width.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(VolumeError::Window { width });
    }
    Ok(ct.map(|v| window_normalize_value(v, width, level)))
}

/// Exact Euclidean distance (mm) from every voxel to the nearest voxel where
/// `inside` holds; separable lower-envelope transform with per-axis spacing.
pub fn distance_transform(inside: &VoxelGrid<bool>, spacing: [f64; 3]) -> VoxelGrid<f64> {
    let dims = inside.dims();
    let big = f64::INFINITY;
    let mut d: Vec<f64> = inside.data().iter().map(|&b| if b { 0.0 } else { big }).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..dims[others[0]] {
            for j in 0..dims[others[1]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                line.clear();
                line.extend((0..n).map(|k| d[base + k * strides[axis]]));
                edt_1d(&line, spacing[axis], &mut out);
                for k in 0..n {
                    d[base + k * strides[axis]] = out[k];
                }
            }
        }
    }
    VoxelGrid {
        dims,
        data: d.into_iter().map(f64::sqrt).collect(),
    }
}

/// Squared-distance lower envelope of parabolas along one axis.
fn edt_1d(f: &[f64], step: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let pos = |q: usize| q as f64 * step;
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.clear();
                z.push(f64::NEG_INFINITY);
                break;
            };
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        return;
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let p = v[k];
        let dx = pos(q) - pos(p);
        *o = dx * dx + f[p];
    }
}
