#ifndef DQE_H
#define DQE_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DqeAgspMode {
  DQE_AGSP_MODE_LINEAR_GLOBAL = 0,
  DQE_AGSP_MODE_PRODUCT_SWEEP = 1,
  DQE_AGSP_MODE_MIXTURE_RANDOM = 2,
} DqeAgspMode;

typedef enum DqeResampling {
  DQE_RESAMPLING_GLOBAL = 0,
  DQE_RESAMPLING_LOCAL = 1,
  DQE_RESAMPLING_IDENTITY = 2,
} DqeResampling;

typedef enum DqeStatus {
  DQE_STATUS_OK = 0,
  DQE_STATUS_NULL_POINTER = 1,
  DQE_STATUS_INVALID_ARGUMENT = 2,
  DQE_STATUS_RESOURCE_LIMIT = 3,
  DQE_STATUS_NUMERICAL = 4,
  DQE_STATUS_PANIC = 5,
} DqeStatus;

// Trajectory settings.
typedef struct DqeRunConfig DqeRunConfig;

// Hamiltonian with its exact spectrum.
typedef struct DqeSystem DqeSystem;

typedef struct DqeTrajectorySummary {
  uint64_t stop_step;
  uint64_t stopped_run_length;
  double final_energy;
  double final_overlap;
  bool truncated;
} DqeTrajectorySummary;

typedef struct DqeEnsembleSummary {
  uint64_t num_trajectories;
  double mean_overlap;
  double stderr_overlap;
  double mean_energy;
  double stderr_energy;
  double mean_stop_step;
  double stderr_stop_step;
  uint64_t truncated;
} DqeEnsembleSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *dqe_version(void);

// Message of the calling thread's last failure; empty when none. Valid
// until the next failing call on the same thread.
const char *dqe_last_error_message(void);

// # Safety
// `out` must be a valid pointer to writable storage.
enum DqeStatus dqe_system_heisenberg(size_t n, bool periodic, struct DqeSystem **out);

// Builds a system from Hamiltonian JSON (`num_qubits`, `terms`).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum DqeStatus dqe_system_from_json(const char *json, struct DqeSystem **out);

// # Safety
// `sys` must come from a `dqe_system_*` constructor and not be freed twice.
void dqe_system_free(struct DqeSystem *sys);

// # Safety
// `sys` must be a live handle or null.
size_t dqe_system_num_qubits(const struct DqeSystem *sys);

// Ground energy λ0 and ground-space degeneracy N.
//
// # Safety
// `sys` must be a live handle; the out pointers must be writable.
enum DqeStatus dqe_system_ground(const struct DqeSystem *sys, double *lambda0, size_t *degeneracy);

// Constant-ε run configuration stopping on the first run of `zeros` zeros.
//
// # Safety
// `out` must be writable.
enum DqeStatus dqe_run_config_new(enum DqeAgspMode mode,
                                  enum DqeResampling resampling,
                                  double eps,
                                  size_t zeros,
                                  uint64_t seed,
                                  struct DqeRunConfig **out);

// Replaces the stopping rule, e.g. `"secretary:1000"` or
// `"run-of-zeros:4,cap:500"`.
//
// # Safety
// `cfg` must be a live handle; `rule` a NUL-terminated string.
enum DqeStatus dqe_run_config_set_stopping(struct DqeRunConfig *cfg, const char *rule);

// # Safety
// `cfg` must be a live handle.
enum DqeStatus dqe_run_config_set_max_steps(struct DqeRunConfig *cfg, size_t max_steps);

// # Safety
// `cfg` must come from `dqe_run_config_new` and not be freed twice.
void dqe_run_config_free(struct DqeRunConfig *cfg);

// Runs trajectory `index` of the seeded family.
//
// # Safety
// Handles must be live; `out` writable.
enum DqeStatus dqe_run_trajectory(const struct DqeSystem *sys,
                                  const struct DqeRunConfig *cfg,
                                  uint64_t index,
                                  struct DqeTrajectorySummary *out);

// Runs trajectories `0..count`; `threads` = 0 uses all cores.
//
// # Safety
// Handles must be live; `out` writable.
enum DqeStatus dqe_run_ensemble(const struct DqeSystem *sys,
                                const struct DqeRunConfig *cfg,
                                size_t count,
                                size_t threads,
                                struct DqeEnsembleSummary *out);

// Exact expected stopping time and stopped-state overlap from the
// maximally mixed start. Needs a run-of-zeros rule without a cap.
//
// # Safety
// Handles must be live; out pointers writable.
enum DqeStatus dqe_expected_stopping(const struct DqeSystem *sys,
                                     const struct DqeRunConfig *cfg,
                                     double *tau,
                                     double *overlap);

// OpenQASM 2 for one term's measurement circuit, or the full sweep when
// `term_index` is negative. Release the string with `dqe_string_free`.
//
// # Safety
// `sys` must be live; `out` writable.
enum DqeStatus dqe_circuit_qasm(const struct DqeSystem *sys,
                                double eps,
                                int64_t term_index,
                                char **out);

// # Safety
// `s` must come from this library and not be freed twice.
void dqe_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DQE_H */
