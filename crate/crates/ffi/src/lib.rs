//! C interface to the meltpool geometry, metrics and inference routines.
//!
//! Every fallible function returns an [`MpStatus`]; on failure the message
//! is available from [`mp_last_error_message`] on the same thread. Objects
//! are handed out as opaque pointers and released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use meltpool::geometry::{contour_to_sdf, extract_iso_contour, sdf_to_mask, GridSpec, MeltPoolContour, Point, SdfGrid};
use meltpool::metrics::{contour_mae, hausdorff, intersection_distance, iou, mae, melt_pool_dimensions, pearson_r};
use meltpool::model::{Checkpoint, SdfNet};
use meltpool::nn::Tensor;
use meltpool::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NoContour = 3,
    OutOfFrame = 4,
    UndefinedCorrelation = 5,
    BufferTooSmall = 6,
    Io = 7,
    Checkpoint = 8,
    Numerical = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: MpStatus, msg: impl Into<String>) -> MpStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> MpStatus {
    match e {
        Error::NoContour { .. } => MpStatus::NoContour,
        Error::ContourOutOfFrame => MpStatus::OutOfFrame,
        Error::UndefinedCorrelation => MpStatus::UndefinedCorrelation,
        Error::Io { .. } => MpStatus::Io,
        Error::Checkpoint(_) => MpStatus::Checkpoint,
        Error::Numerical(_) => MpStatus::Numerical,
        _ => MpStatus::InvalidArgument,
    }
}

/// Runs `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), MpStatus>) -> MpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(MpStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, MpStatus>;
}

impl<T> OrStatus<T> for meltpool::Result<T> {
    fn or_status(self) -> Result<T, MpStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), MpStatus> {
    if p.is_null() {
        Err(fail(MpStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], MpStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), MpStatus> {
    non_null(out, what)?;
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn mp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Melt-pool boundary polyline.
pub struct MpContour(MeltPoolContour);

/// Truncated signed-distance image.
pub struct MpSdfGrid(SdfGrid);

/// Trained network loaded from a checkpoint.
pub struct MpModel {
    net: SdfNet<f32>,
    grid: Option<GridSpec>,
    truncation_um: Option<f64>,
}

/// Raster geometry of a signed-distance image.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MpGridSpec {
    pub rows: usize,
    pub cols: usize,
    pub pitch_x_um: f64,
    pub pitch_d_um: f64,
}

impl From<MpGridSpec> for GridSpec {
    fn from(g: MpGridSpec) -> Self {
        GridSpec {
            rows: g.rows,
            cols: g.cols,
            pitch_x_um: g.pitch_x_um,
            pitch_d_um: g.pitch_d_um,
        }
    }
}

impl From<GridSpec> for MpGridSpec {
    fn from(g: GridSpec) -> Self {
        MpGridSpec {
            rows: g.rows,
            cols: g.cols,
            pitch_x_um: g.pitch_x_um,
            pitch_d_um: g.pitch_d_um,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MpDimensions {
    pub depth_um: f64,
    pub width_um: f64,
    pub area_um2: f64,
}

/// The 64 x 64 target grid used by the toolkit.
#[no_mangle]
pub extern "C" fn mp_default_grid() -> MpGridSpec {
    GridSpec::default().into()
}

/// Builds a contour from `n` lateral offsets `xs` and depths `ds` (µm).
///
/// # Safety
/// `xs` and `ds` must point to `n` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_contour_new(xs: *const f64, ds: *const f64, n: usize, out: *mut *mut MpContour) -> MpStatus {
    guard(|| {
        non_null(out, "out")?;
        let (xs, ds) = (slice(xs, n, "xs")?, slice(ds, n, "ds")?);
        let pts = xs.iter().zip(ds).map(|(&x, &d)| Point::new(x, d)).collect();
        let c = MeltPoolContour::new(pts).or_status()?;
        write(out, Box::into_raw(Box::new(MpContour(c))), "out")
    })
}

/// # Safety
/// `c` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_contour_free(c: *mut MpContour) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live contour handle.
#[no_mangle]
pub unsafe extern "C" fn mp_contour_len(c: *const MpContour) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the points into `xs` and `ds`, each with room for `capacity`
/// values. Fails with `BufferTooSmall` when `capacity < mp_contour_len(c)`.
///
/// # Safety
/// `c` must be a live handle; `xs` and `ds` must be writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mp_contour_points(c: *const MpContour, xs: *mut f64, ds: *mut f64, capacity: usize) -> MpStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "contour is null"))?;
        if capacity < c.0.len() {
            return Err(fail(
                MpStatus::BufferTooSmall,
                format!("need {} values, got {capacity}", c.0.len()),
            ));
        }
        non_null(xs, "xs")?;
        non_null(ds, "ds")?;
        for (i, p) in c.0.points().iter().enumerate() {
            xs.add(i).write(p.x);
            ds.add(i).write(p.d);
        }
        Ok(())
    })
}

/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_contour_dimensions(c: *const MpContour, out: *mut MpDimensions) -> MpStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "contour is null"))?;
        let d = melt_pool_dimensions(&c.0).or_status()?;
        write(
            out,
            MpDimensions {
                depth_um: d.depth_um,
                width_um: d.width_um,
                area_um2: d.area_um2,
            },
            "out",
        )
    })
}

unsafe fn pair<'a>(a: *const MpContour, b: *const MpContour) -> Result<(&'a MeltPoolContour, &'a MeltPoolContour), MpStatus> {
    let a = a.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "first contour is null"))?;
    let b = b.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "second contour is null"))?;
    Ok((&a.0, &b.0))
}

/// Mean absolute depth difference of the 100-point resamplings.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_contour_mae(pred: *const MpContour, gt: *const MpContour, out: *mut f64) -> MpStatus {
    guard(|| {
        let (p, g) = pair(pred, gt)?;
        write(out, contour_mae(p, g).or_status()?, "out")
    })
}

/// Symmetric Hausdorff distance (µm).
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_hausdorff(a: *const MpContour, b: *const MpContour, out: *mut f64) -> MpStatus {
    guard(|| {
        let (a, b) = pair(a, b)?;
        write(out, hausdorff(a, b).or_status()?, "out")
    })
}

/// Overlap of `left` with `right` shifted by `hatch_spacing_um`. Sets
/// `overlaps` to 1 and `distance_um` to the base-to-crossing distance when
/// the boundaries cross, else `overlaps` to 0 and `distance_um` to NaN.
///
/// # Safety
/// Both handles must be live and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn mp_intersection_distance(
    left: *const MpContour,
    right: *const MpContour,
    hatch_spacing_um: f64,
    overlaps: *mut i32,
    distance_um: *mut f64,
) -> MpStatus {
    guard(|| {
        let (l, r) = pair(left, right)?;
        non_null(overlaps, "overlaps")?;
        non_null(distance_um, "distance_um")?;
        let i = intersection_distance(l, r, hatch_spacing_um).or_status()?;
        overlaps.write(i32::from(i.overlaps()));
        distance_um.write(i.distance_um().unwrap_or(f64::NAN));
        Ok(())
    })
}

/// Pearson correlation of `n` pairs.
///
/// # Safety
/// `xs` and `ys` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_pearson_r(xs: *const f64, ys: *const f64, n: usize, out: *mut f64) -> MpStatus {
    guard(|| {
        let r = pearson_r(slice(xs, n, "xs")?, slice(ys, n, "ys")?).or_status()?;
        write(out, r, "out")
    })
}

/// Mean absolute difference of `n` pairs.
///
/// # Safety
/// `ys` and `preds` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_mae(ys: *const f64, preds: *const f64, n: usize, out: *mut f64) -> MpStatus {
    guard(|| {
        let m = mae(slice(ys, n, "ys")?, slice(preds, n, "preds")?).or_status()?;
        write(out, m, "out")
    })
}

/// Rasterizes a contour into a signed-distance image.
///
/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_sdf_from_contour(
    c: *const MpContour,
    grid: MpGridSpec,
    truncation_um: f64,
    out: *mut *mut MpSdfGrid,
) -> MpStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "contour is null"))?;
        non_null(out, "out")?;
        let g = contour_to_sdf(&c.0, &grid.into(), truncation_um).or_status()?;
        write(out, Box::into_raw(Box::new(MpSdfGrid(g))), "out")
    })
}

/// Wraps `rows * cols` normalized values in `[-1, 1]`, row-major.
///
/// # Safety
/// `values` must hold `grid.rows * grid.cols` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_sdf_from_values(
    grid: MpGridSpec,
    truncation_um: f64,
    values: *const f64,
    out: *mut *mut MpSdfGrid,
) -> MpStatus {
    guard(|| {
        non_null(out, "out")?;
        let n = grid.rows.checked_mul(grid.cols).ok_or_else(|| fail(MpStatus::InvalidArgument, "grid too large"))?;
        let v = slice(values, n, "values")?.to_vec();
        let g = SdfGrid::from_values(grid.into(), truncation_um, v).or_status()?;
        write(out, Box::into_raw(Box::new(MpSdfGrid(g))), "out")
    })
}

/// # Safety
/// `g` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_sdf_free(g: *mut MpSdfGrid) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Copies the normalized values, row-major, into `out`.
///
/// # Safety
/// `g` must be a live handle and `out` writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mp_sdf_values(g: *const MpSdfGrid, out: *mut f64, capacity: usize) -> MpStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "grid is null"))?;
        let v = g.0.values();
        if capacity < v.len() {
            return Err(fail(MpStatus::BufferTooSmall, format!("need {} values, got {capacity}", v.len())));
        }
        non_null(out, "out")?;
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// Level set of a signed-distance image as a contour.
///
/// # Safety
/// `g` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_sdf_extract_contour(g: *const MpSdfGrid, level: f64, out: *mut *mut MpContour) -> MpStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "grid is null"))?;
        non_null(out, "out")?;
        let c = extract_iso_contour(&g.0, level).or_status()?;
        write(out, Box::into_raw(Box::new(MpContour(c))), "out")
    })
}

/// Intersection over union of the negative regions of two images.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_sdf_iou(a: *const MpSdfGrid, b: *const MpSdfGrid, out: *mut f64) -> MpStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "first grid is null"))?;
        let b = b.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "second grid is null"))?;
        write(out, iou(&sdf_to_mask(&a.0), &sdf_to_mask(&b.0)).or_status()?, "out")
    })
}

/// Loads a checkpoint written by the `mpf` tool.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_model_load(path: *const c_char, out: *mut *mut MpModel) -> MpStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(MpStatus::InvalidArgument, "path is not UTF-8"))?;
        let ckpt = Checkpoint::load(Path::new(path)).or_status()?;
        let (grid, truncation_um) = (ckpt.meta.grid, ckpt.meta.truncation_um);
        let net = SdfNet::with_params(ckpt.config, ckpt.params).or_status()?;
        write(
            out,
            Box::into_raw(Box::new(MpModel {
                net,
                grid,
                truncation_um,
            })),
            "out",
        )
    })
}

/// # Safety
/// `m` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_model_free(m: *mut MpModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Trainable parameter count, 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_model_num_parameters(m: *const MpModel) -> usize {
    m.as_ref().map_or(0, |m| m.net.num_parameters())
}

/// Side length of the square input frames and output image.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_model_image_size(m: *const MpModel) -> usize {
    m.as_ref().map_or(0, |m| m.net.config().image_size())
}

/// Predicts one signed-distance image from `frames` consecutive normalized
/// frames, each `size * size` values row-major (`size` from
/// [`mp_model_image_size`]). Writes `size * size` values into `out`.
///
/// # Safety
/// `m` must be a live handle, `input` readable for `frames * size * size`
/// values and `out` writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mp_model_predict(
    m: *const MpModel,
    input: *const f32,
    frames: usize,
    out: *mut f32,
    capacity: usize,
) -> MpStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "model is null"))?;
        let s = m.net.config().image_size();
        if frames == 0 {
            return Err(fail(MpStatus::InvalidArgument, "need at least one frame"));
        }
        if capacity < s * s {
            return Err(fail(MpStatus::BufferTooSmall, format!("need {} values, got {capacity}", s * s)));
        }
        non_null(out, "out")?;
        let x = slice(input, frames * s * s, "input")?.to_vec();
        let pred = m.net.predict(&Tensor::new(vec![1, frames, s, s], x).or_status()?).or_status()?;
        ptr::copy_nonoverlapping(pred.data().as_ptr(), out, s * s);
        Ok(())
    })
}

/// Predicts and wraps the result as a signed-distance image on the grid the
/// model was trained on.
///
/// # Safety
/// As for [`mp_model_predict`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_model_predict_sdf(
    m: *const MpModel,
    input: *const f32,
    frames: usize,
    out: *mut *mut MpSdfGrid,
) -> MpStatus {
    guard(|| {
        let model = m.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, "model is null"))?;
        let (Some(grid), Some(trunc)) = (model.grid, model.truncation_um) else {
            return Err(fail(MpStatus::Checkpoint, "checkpoint does not record its target grid"));
        };
        non_null(out, "out")?;
        let mut values = vec![0f32; grid.len()];
        match mp_model_predict(m, input, frames, values.as_mut_ptr(), values.len()) {
            MpStatus::Ok => {}
            s => return Err(s),
        }
        let g = SdfGrid::from_prediction(grid, trunc, &values).or_status()?;
        write(out, Box::into_raw(Box::new(MpSdfGrid(g))), "out")
    })
}
