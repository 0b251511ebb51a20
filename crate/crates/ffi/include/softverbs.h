#ifndef SOFTVERBS_H
#define SOFTVERBS_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SV_ACCESS_LOCAL_WRITE 1

#define SV_ACCESS_REMOTE_WRITE 2

#define SV_ACCESS_REMOTE_READ 4

#define SV_ACCESS_REMOTE_ATOMIC 8

#define SV_ATTR_STATE (1 << 0)

#define SV_ATTR_PKEY_INDEX (1 << 1)

#define SV_ATTR_PORT (1 << 2)

#define SV_ATTR_ACCESS_FLAGS (1 << 3)

#define SV_ATTR_AV (1 << 4)

#define SV_ATTR_PATH_MTU (1 << 5)

#define SV_ATTR_DEST_QPN (1 << 6)

#define SV_ATTR_RQ_PSN (1 << 7)

#define SV_ATTR_MAX_DEST_RD_ATOMIC (1 << 8)

#define SV_ATTR_MIN_RNR_TIMER (1 << 9)

#define SV_ATTR_TIMEOUT (1 << 10)

#define SV_ATTR_RETRY_CNT (1 << 11)

#define SV_ATTR_RNR_RETRY (1 << 12)

#define SV_ATTR_SQ_PSN (1 << 13)

#define SV_ATTR_MAX_QP_RD_ATOMIC (1 << 14)

/**
 * Result code of every fallible call.
 */
typedef enum SvStatus {
  SV_STATUS_OK = 0,
  SV_STATUS_NULL_POINTER,
  SV_STATUS_INVALID_ARGUMENT,
  SV_STATUS_NOT_FOUND,
  SV_STATUS_BUSY,
  SV_STATUS_DESTROYED,
  SV_STATUS_ILLEGAL_TRANSITION,
  SV_STATUS_INCOMPLETE_MASK,
  SV_STATUS_PORT,
  SV_STATUS_INVALID_STATE,
  SV_STATUS_QUEUE_FULL,
  SV_STATUS_INVALID_LKEY,
  SV_STATUS_OUT_OF_BOUNDS,
  SV_STATUS_CQ_ERROR,
  SV_STATUS_FABRIC,
  SV_STATUS_INTERNAL,
} SvStatus;

typedef enum SvWcStatus {
  SV_WC_STATUS_SUCCESS = 0,
  SV_WC_STATUS_LOCAL_PROTECTION_ERROR,
  SV_WC_STATUS_RETRY_EXCEEDED,
  SV_WC_STATUS_RNR_RETRY_EXCEEDED,
  SV_WC_STATUS_WORK_REQUEST_FLUSHED,
} SvWcStatus;

typedef enum SvWcOpcode {
  SV_WC_OPCODE_SEND = 0,
  SV_WC_OPCODE_RECV,
} SvWcOpcode;

typedef enum SvQpState {
  SV_QP_STATE_RESET = 0,
  SV_QP_STATE_INIT,
  SV_QP_STATE_RTR,
  SV_QP_STATE_RTS,
  SV_QP_STATE_ERR,
} SvQpState;

typedef struct SvBuffer SvBuffer;

typedef struct SvContext SvContext;

typedef struct SvCq SvCq;

typedef struct SvFabric SvFabric;

typedef struct SvMr SvMr;

typedef struct SvPd SvPd;

typedef struct SvQp SvQp;

typedef struct SvRegistry SvRegistry;

typedef struct SvFaultProfile {
  double drop_probability;
  double duplicate_probability;
  double reorder_probability;
  uint64_t seed;
} SvFaultProfile;

typedef struct SvWc {
  uint64_t wr_id;
  enum SvWcStatus status;
  enum SvWcOpcode opcode;
  uint32_t byte_len;
  uint32_t qp_num;
} SvWc;

typedef struct SvQpCaps {
  uint32_t max_send_wr;
  uint32_t max_recv_wr;
  uint32_t max_send_sge;
  uint32_t max_recv_sge;
} SvQpCaps;

typedef struct SvAddressHandle {
  uint16_t dlid;
  uint8_t sl;
  uint8_t src_path_bits;
  uint8_t port_num;
  bool is_global;
  uint8_t dgid[16];
} SvAddressHandle;

/**
 * Queue pair attributes. `path_mtu` is in bytes (256 to 4096).
 */
typedef struct SvQpAttr {
  enum SvQpState qp_state;
  uint16_t pkey_index;
  uint8_t port_num;
  uint32_t qp_access_flags;
  uint32_t path_mtu;
  uint32_t dest_qp_num;
  uint32_t rq_psn;
  uint32_t sq_psn;
  uint8_t max_dest_rd_atomic;
  uint8_t max_rd_atomic;
  uint8_t min_rnr_timer;
  uint8_t timeout;
  uint8_t retry_cnt;
  uint8_t rnr_retry;
  struct SvAddressHandle ah;
} SvQpAttr;

typedef struct SvSge {
  uint64_t addr;
  uint32_t length;
  uint32_t lkey;
} SvSge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the calling thread's most recent failure, or an empty
 * string. Valid until the next call into this library on the same thread.
 */
const char *sv_last_error(void);

/**
 * Static name of a status code, e.g. "SV_STATUS_BUSY".
 */
const char *sv_status_name(enum SvStatus status);

enum SvStatus sv_registry_new(struct SvRegistry **out);

enum SvStatus sv_registry_add_device(const struct SvRegistry *reg, const char *name, uint64_t guid);

void sv_registry_free(struct SvRegistry *reg);

/**
 * Creates an in-process fabric. `faults` may be null for a lossless one.
 */
enum SvStatus sv_fabric_loopback_new(const struct SvFaultProfile *faults, struct SvFabric **out);

void sv_fabric_free(struct SvFabric *fabric);

/**
 * Activates `port` of `ctx` and reports the LID it was given.
 */
enum SvStatus sv_fabric_attach(const struct SvFabric *fabric,
                               const struct SvContext *ctx,
                               uint8_t port,
                               uint16_t *out_lid);

/**
 * Processes queued loopback events until none remain or `max_events` have
 * run. `out_events` (nullable) receives the number processed.
 */
enum SvStatus sv_fabric_run_until_idle(const struct SvFabric *fabric,
                                       size_t max_events,
                                       size_t *out_events);

/**
 * Current fabric clock in microseconds.
 */
uint64_t sv_fabric_now_us(const struct SvFabric *fabric);

enum SvStatus sv_context_open(const struct SvRegistry *reg,
                              const char *name,
                              struct SvContext **out);

/**
 * Fails with `SV_STATUS_BUSY` while child resources exist.
 */
enum SvStatus sv_context_close(struct SvContext *ctx);

enum SvStatus sv_pd_alloc(const struct SvContext *ctx, struct SvPd **out);

enum SvStatus sv_pd_dealloc(struct SvPd *pd);

/**
 * Allocates a zeroed buffer with a page-aligned synthetic address.
 */
enum SvStatus sv_buffer_alloc(size_t len, struct SvBuffer **out);

void sv_buffer_free(struct SvBuffer *buf);

/**
 * Address of byte 0, for building scatter/gather elements.
 */
uint64_t sv_buffer_addr(const struct SvBuffer *buf);

enum SvStatus sv_buffer_write(const struct SvBuffer *buf,
                              size_t offset,
                              const uint8_t *src,
                              size_t len);

enum SvStatus sv_buffer_read(const struct SvBuffer *buf, size_t offset, uint8_t *dst, size_t len);

/**
 * Registers `len` bytes of `buf` starting at `offset`.
 */
enum SvStatus sv_mr_reg(const struct SvPd *pd,
                        const struct SvBuffer *buf,
                        size_t offset,
                        size_t len,
                        uint32_t access,
                        struct SvMr **out);

uint32_t sv_mr_lkey(const struct SvMr *mr);

uint64_t sv_mr_addr(const struct SvMr *mr);

enum SvStatus sv_mr_dereg(struct SvMr *mr);

enum SvStatus sv_cq_create(const struct SvContext *ctx, size_t capacity, struct SvCq **out);

/**
 * Removes up to `max` completions into `wcs`; the count goes to `out_n`.
 * A queue that overflowed reports `SV_STATUS_CQ_ERROR` from then on.
 */
enum SvStatus sv_cq_poll(const struct SvCq *cq, struct SvWc *wcs, size_t max, size_t *out_n);

/**
 * True once the queue has latched its error state.
 */
bool sv_cq_is_error(const struct SvCq *cq);

enum SvStatus sv_cq_destroy(struct SvCq *cq);

/**
 * Creates a reliable-connection queue pair in RESET. Every send completes
 * with a work completion.
 */
enum SvStatus sv_qp_create(const struct SvPd *pd,
                           const struct SvCq *send_cq,
                           const struct SvCq *recv_cq,
                           const struct SvQpCaps *caps,
                           struct SvQp **out);

uint32_t sv_qp_num(const struct SvQp *qp);

/**
 * Current state; a null handle reads as RESET.
 */
enum SvQpState sv_qp_state(const struct SvQp *qp);

/**
 * Writes the fields of `attr` selected by `mask` (`SV_ATTR_*` bits). With
 * `SV_ATTR_STATE` set this is a state transition and the mask must include
 * every field the target state requires.
 */
enum SvStatus sv_qp_modify(const struct SvQp *qp, const struct SvQpAttr *attr, uint32_t mask);

enum SvStatus sv_qp_query(const struct SvQp *qp, struct SvQpAttr *out);

/**
 * Posts one SEND gathering `n` elements. Requires RTS.
 */
enum SvStatus sv_qp_post_send(const struct SvQp *qp,
                              uint64_t wr_id,
                              const struct SvSge *sges,
                              size_t n);

/**
 * Posts one receive scattering into `n` elements. Allowed from INIT on.
 */
enum SvStatus sv_qp_post_recv(const struct SvQp *qp,
                              uint64_t wr_id,
                              const struct SvSge *sges,
                              size_t n);

enum SvStatus sv_qp_destroy(struct SvQp *qp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTVERBS_H */
