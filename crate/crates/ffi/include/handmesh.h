#ifndef HANDMESH_H
#define HANDMESH_H

/* Generated from the Rust sources by cbindgen; edit those instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Non-ok codes leave a human-readable
 * explanation in hm_last_error for the calling thread.
 */
typedef enum HmStatus {
  HM_STATUS_OK = 0,
  HM_STATUS_NULL_ARGUMENT = 1,
  HM_STATUS_INVALID_ARGUMENT = 2,
  HM_STATUS_UTF8 = 3,
  HM_STATUS_IO = 4,
  HM_STATUS_INTERNAL = 5,
} HmStatus;

/**
 * Opaque multi-resolution hierarchy handle. Release with hm_hierarchy_free.
 */
typedef struct HmHierarchy HmHierarchy;

/**
 * Opaque triangle mesh handle. Create with hm_mesh_from_template or
 * hm_mesh_read_obj; release with hm_mesh_free.
 */
typedef struct HmMesh HmMesh;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Explanation of the most recent non-ok status on this thread. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *hm_last_error(void);

/**
 * Library version as a static string.
 */
const char *hm_version(void);

/**
 * The built-in closed hand template.
 *
 * # Safety
 * `out` must point to writable storage for one pointer.
 */
enum HmStatus hm_mesh_from_template(struct HmMesh **out);

/**
 * Reads a Wavefront OBJ (v/f records).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HmStatus hm_mesh_read_obj(const char *path, struct HmMesh **out);

/**
 * Writes the mesh as a Wavefront OBJ.
 *
 * # Safety
 * `mesh` must be a live handle; `path` must be NUL-terminated.
 */
enum HmStatus hm_mesh_write_obj(const struct HmMesh *mesh, const char *path);

/**
 * # Safety
 * `mesh` must be a live handle; `out` must be writable.
 */
enum HmStatus hm_mesh_vertex_count(const struct HmMesh *mesh, size_t *out);

/**
 * # Safety
 * `mesh` must be a live handle; `out` must be writable.
 */
enum HmStatus hm_mesh_face_count(const struct HmMesh *mesh, size_t *out);

/**
 * Copies vertices into `out` as x,y,z triples. `len` must be exactly
 * 3 times the vertex count.
 *
 * # Safety
 * `mesh` must be a live handle; `out` must hold `len` doubles.
 */
enum HmStatus hm_mesh_copy_vertices(const struct HmMesh *mesh, double *out, size_t len);

/**
 * # Safety
 * `mesh` must come from this library and not be freed twice.
 */
void hm_mesh_free(struct HmMesh *mesh);

/**
 * Builds a hierarchy whose level sizes halve from the base mesh.
 * `levels` counts all levels including the base; `spiral_length` is the
 * neighborhood size used at every level.
 *
 * # Safety
 * `base` must be a live handle; `out` must be writable.
 */
enum HmStatus hm_hierarchy_build(const struct HmMesh *base,
                                 size_t levels,
                                 size_t spiral_length,
                                 struct HmHierarchy **out);

/**
 * Loads a hierarchy directory written by hm_hierarchy_save.
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` must be writable.
 */
enum HmStatus hm_hierarchy_load(const char *dir, struct HmHierarchy **out);

/**
 * # Safety
 * `hierarchy` must be a live handle; `dir` must be NUL-terminated.
 */
enum HmStatus hm_hierarchy_save(const struct HmHierarchy *hierarchy, const char *dir);

/**
 * # Safety
 * `hierarchy` must be a live handle; `out` must be writable.
 */
enum HmStatus hm_hierarchy_level_count(const struct HmHierarchy *hierarchy, size_t *out);

/**
 * Vertex count at one level; level 0 is the finest.
 *
 * # Safety
 * `hierarchy` must be a live handle; `out` must be writable.
 */
enum HmStatus hm_hierarchy_level_size(const struct HmHierarchy *hierarchy,
                                      size_t level,
                                      size_t *out);

/**
 * Copies one level's mesh into a fresh handle; level 0 is the finest.
 *
 * # Safety
 * `hierarchy` must be a live handle; `out` must be writable.
 */
enum HmStatus hm_hierarchy_level_mesh(const struct HmHierarchy *hierarchy,
                                      size_t level,
                                      struct HmMesh **out);

/**
 * # Safety
 * `hierarchy` must come from this library and not be freed twice.
 */
void hm_hierarchy_free(struct HmHierarchy *hierarchy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HANDMESH_H */
