//! C ABI over meshes and mesh hierarchies: opaque handles, status codes,
//! and a per-thread error message. Every function is panic-safe; a caught
//! panic reports HM_STATUS_INTERNAL instead of unwinding across the ABI.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use handmesh::hierarchy::{build_hierarchy, halving_sizes, MeshHierarchy};
use handmesh::mesh::{hand_template, obj, Mesh};

/// Result of every fallible call. Non-ok codes leave a human-readable
/// explanation in hm_last_error for the calling thread.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Io = 4,
    Internal = 5,
}

/// Opaque triangle mesh handle. Create with hm_mesh_from_template or
/// hm_mesh_read_obj; release with hm_mesh_free.
pub struct HmMesh {
    inner: Mesh,
}

/// Opaque multi-resolution hierarchy handle. Release with hm_hierarchy_free.
pub struct HmHierarchy {
    inner: MeshHierarchy,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes stripped");
    });
}

fn fail(status: HmStatus, message: &str) -> HmStatus {
    set_error(message);
    status
}

/// Explanation of the most recent non-ok status on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guard(body: impl FnOnce() -> HmStatus) -> HmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic of unknown type".to_string());
            fail(HmStatus::Internal, &message)
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a Path, HmStatus> {
    if ptr.is_null() {
        return Err(fail(HmStatus::NullArgument, &format!("{name} is null")));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(HmStatus::Utf8, &format!("{name} is not valid UTF-8"))),
    }
}

unsafe fn out_arg<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, HmStatus> {
    if ptr.is_null() {
        Err(fail(HmStatus::NullArgument, &format!("{name} is null")))
    } else {
        Ok(&mut *ptr)
    }
}

unsafe fn mesh_arg<'a>(ptr: *const HmMesh, name: &str) -> Result<&'a Mesh, HmStatus> {
    if ptr.is_null() {
        Err(fail(HmStatus::NullArgument, &format!("{name} is null")))
    } else {
        Ok(&(*ptr).inner)
    }
}

unsafe fn hierarchy_arg<'a>(
    ptr: *const HmHierarchy,
    name: &str,
) -> Result<&'a MeshHierarchy, HmStatus> {
    if ptr.is_null() {
        Err(fail(HmStatus::NullArgument, &format!("{name} is null")))
    } else {
        Ok(&(*ptr).inner)
    }
}

fn give_mesh(out: &mut *mut HmMesh, mesh: Mesh) -> HmStatus {
    *out = Box::into_raw(Box::new(HmMesh { inner: mesh }));
    HmStatus::Ok
}

/// The built-in closed hand template.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hm_mesh_from_template(out: *mut *mut HmMesh) -> HmStatus {
    guard(|| {
        let out = match out_arg(out, "out") {
            Ok(v) => v,
            Err(s) => return s,
        };
        give_mesh(out, hand_template().mesh)
    })
}

/// Reads a Wavefront OBJ (v/f records).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_mesh_read_obj(
    path: *const c_char,
    out: *mut *mut HmMesh,
) -> HmStatus {
    guard(|| {
        let (path, out) = match (path_arg(path, "path"), out_arg(out, "out")) {
            (Ok(p), Ok(o)) => (p, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match obj::read_obj(path) {
            Ok(mesh) => give_mesh(out, mesh),
            Err(e) => fail(HmStatus::Io, &e.to_string()),
        }
    })
}

/// Writes the mesh as a Wavefront OBJ.
///
/// # Safety
/// `mesh` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hm_mesh_write_obj(
    mesh: *const HmMesh,
    path: *const c_char,
) -> HmStatus {
    guard(|| {
        let (mesh, path) = match (mesh_arg(mesh, "mesh"), path_arg(path, "path")) {
            (Ok(m), Ok(p)) => (m, p),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match obj::write_obj(path, mesh) {
            Ok(()) => HmStatus::Ok,
            Err(e) => fail(HmStatus::Io, &e.to_string()),
        }
    })
}

/// # Safety
/// `mesh` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_mesh_vertex_count(
    mesh: *const HmMesh,
    out: *mut usize,
) -> HmStatus {
    guard(|| {
        let (mesh, out) = match (mesh_arg(mesh, "mesh"), out_arg(out, "out")) {
            (Ok(m), Ok(o)) => (m, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = mesh.vertex_count();
        HmStatus::Ok
    })
}

/// # Safety
/// `mesh` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_mesh_face_count(mesh: *const HmMesh, out: *mut usize) -> HmStatus {
    guard(|| {
        let (mesh, out) = match (mesh_arg(mesh, "mesh"), out_arg(out, "out")) {
            (Ok(m), Ok(o)) => (m, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = mesh.faces().len();
        HmStatus::Ok
    })
}

/// Copies vertices into `out` as x,y,z triples. `len` must be exactly
/// 3 times the vertex count.
///
/// # Safety
/// `mesh` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hm_mesh_copy_vertices(
    mesh: *const HmMesh,
    out: *mut f64,
    len: usize,
) -> HmStatus {
    guard(|| {
        let mesh = match mesh_arg(mesh, "mesh") {
            Ok(m) => m,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(HmStatus::NullArgument, "out is null");
        }
        let needed = 3 * mesh.vertex_count();
        if len != needed {
            return fail(
                HmStatus::InvalidArgument,
                &format!("buffer holds {len} doubles, need {needed}"),
            );
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (i, v) in mesh.vertices().iter().enumerate() {
            dst[3 * i..3 * i + 3].copy_from_slice(v);
        }
        HmStatus::Ok
    })
}

/// # Safety
/// `mesh` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hm_mesh_free(mesh: *mut HmMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Builds a hierarchy whose level sizes halve from the base mesh.
/// `levels` counts all levels including the base; `spiral_length` is the
/// neighborhood size used at every level.
///
/// # Safety
/// `base` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_build(
    base: *const HmMesh,
    levels: usize,
    spiral_length: usize,
    out: *mut *mut HmHierarchy,
) -> HmStatus {
    guard(|| {
        let (base, out) = match (mesh_arg(base, "base"), out_arg(out, "out")) {
            (Ok(b), Ok(o)) => (b, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        if levels < 2 {
            return fail(HmStatus::InvalidArgument, "need at least 2 levels");
        }
        let targets = halving_sizes(base.vertex_count(), levels - 1);
        let lengths = vec![spiral_length; levels];
        match build_hierarchy(base, &targets, &lengths) {
            Ok(h) => {
                *out = Box::into_raw(Box::new(HmHierarchy { inner: h }));
                HmStatus::Ok
            }
            Err(e) => fail(HmStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Loads a hierarchy directory written by hm_hierarchy_save.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_load(
    dir: *const c_char,
    out: *mut *mut HmHierarchy,
) -> HmStatus {
    guard(|| {
        let (dir, out) = match (path_arg(dir, "dir"), out_arg(out, "out")) {
            (Ok(d), Ok(o)) => (d, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match MeshHierarchy::load(dir) {
            Ok(h) => {
                *out = Box::into_raw(Box::new(HmHierarchy { inner: h }));
                HmStatus::Ok
            }
            Err(e) => fail(HmStatus::Io, &e.to_string()),
        }
    })
}

/// # Safety
/// `hierarchy` must be a live handle; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_save(
    hierarchy: *const HmHierarchy,
    dir: *const c_char,
) -> HmStatus {
    guard(|| {
        let (h, dir) = match (hierarchy_arg(hierarchy, "hierarchy"), path_arg(dir, "dir")) {
            (Ok(h), Ok(d)) => (h, d),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match h.save(dir) {
            Ok(()) => HmStatus::Ok,
            Err(e) => fail(HmStatus::Io, &e.to_string()),
        }
    })
}

/// # Safety
/// `hierarchy` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_level_count(
    hierarchy: *const HmHierarchy,
    out: *mut usize,
) -> HmStatus {
    guard(|| {
        let (h, out) = match (hierarchy_arg(hierarchy, "hierarchy"), out_arg(out, "out")) {
            (Ok(h), Ok(o)) => (h, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = h.level_count();
        HmStatus::Ok
    })
}

/// Vertex count at one level; level 0 is the finest.
///
/// # Safety
/// `hierarchy` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_level_size(
    hierarchy: *const HmHierarchy,
    level: usize,
    out: *mut usize,
) -> HmStatus {
    guard(|| {
        let (h, out) = match (hierarchy_arg(hierarchy, "hierarchy"), out_arg(out, "out")) {
            (Ok(h), Ok(o)) => (h, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let sizes = h.level_sizes();
        match sizes.get(level) {
            Some(&n) => {
                *out = n;
                HmStatus::Ok
            }
            None => fail(
                HmStatus::InvalidArgument,
                &format!("level {level} out of range, hierarchy has {}", sizes.len()),
            ),
        }
    })
}

/// Copies one level's mesh into a fresh handle; level 0 is the finest.
///
/// # Safety
/// `hierarchy` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_level_mesh(
    hierarchy: *const HmHierarchy,
    level: usize,
    out: *mut *mut HmMesh,
) -> HmStatus {
    guard(|| {
        let (h, out) = match (hierarchy_arg(hierarchy, "hierarchy"), out_arg(out, "out")) {
            (Ok(h), Ok(o)) => (h, o),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match h.levels.get(level) {
            Some(l) => give_mesh(out, l.mesh.clone()),
            None => fail(
                HmStatus::InvalidArgument,
                &format!("level {level} out of range, hierarchy has {}", h.levels.len()),
            ),
        }
    })
}

/// # Safety
/// `hierarchy` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hm_hierarchy_free(hierarchy: *mut HmHierarchy) {
    if !hierarchy.is_null() {
        drop(Box::from_raw(hierarchy));
    }
}
