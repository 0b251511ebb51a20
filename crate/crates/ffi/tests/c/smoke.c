/* Two queue pairs on a loopback fabric exchange one message through the C API. */
#include <stdio.h>
#include <string.h>

#include "softverbs.h"

#define CHECK(call)                                                                    \
    do {                                                                               \
        SvStatus s_ = (call);                                                          \
        if (s_ != SV_STATUS_OK) {                                                      \
            fprintf(stderr, "%s:%d %s -> %s (%s)\n", __FILE__, __LINE__, #call,        \
                    sv_status_name(s_), sv_last_error());                              \
            return 1;                                                                  \
        }                                                                              \
    } while (0)

typedef struct {
    SvContext *ctx;
    SvPd *pd;
    SvBuffer *buf;
    SvMr *mr;
    SvCq *cq;
    SvQp *qp;
    uint16_t lid;
} Node;

static int node_open(SvRegistry *reg, SvFabric *fabric, const char *dev, Node *n) {
    SvQpCaps caps = {4, 4, 1, 1};
    CHECK(sv_context_open(reg, dev, &n->ctx));
    CHECK(sv_fabric_attach(fabric, n->ctx, 1, &n->lid));
    CHECK(sv_pd_alloc(n->ctx, &n->pd));
    CHECK(sv_buffer_alloc(4096, &n->buf));
    CHECK(sv_mr_reg(n->pd, n->buf, 0, 4096, SV_ACCESS_LOCAL_WRITE, &n->mr));
    CHECK(sv_cq_create(n->ctx, 8, &n->cq));
    CHECK(sv_qp_create(n->pd, n->cq, n->cq, &caps, &n->qp));
    return 0;
}

static int node_connect(Node *n, const Node *peer, uint32_t my_psn, uint32_t peer_psn) {
    SvQpAttr a;
    memset(&a, 0, sizeof a);
    a.qp_state = SV_QP_STATE_INIT;
    a.port_num = 1;
    a.path_mtu = 1024;
    CHECK(sv_qp_modify(n->qp, &a, SV_ATTR_STATE | SV_ATTR_PKEY_INDEX | SV_ATTR_PORT | SV_ATTR_ACCESS_FLAGS));

    a.qp_state = SV_QP_STATE_RTR;
    a.dest_qp_num = sv_qp_num(peer->qp);
    a.rq_psn = peer_psn;
    a.max_dest_rd_atomic = 1;
    a.min_rnr_timer = 12;
    a.ah.dlid = peer->lid;
    a.ah.port_num = 1;
    CHECK(sv_qp_modify(n->qp, &a,
                       SV_ATTR_STATE | SV_ATTR_AV | SV_ATTR_PATH_MTU | SV_ATTR_DEST_QPN | SV_ATTR_RQ_PSN |
                           SV_ATTR_MAX_DEST_RD_ATOMIC | SV_ATTR_MIN_RNR_TIMER));

    a.qp_state = SV_QP_STATE_RTS;
    a.timeout = 14;
    a.retry_cnt = 7;
    a.rnr_retry = 7;
    a.sq_psn = my_psn;
    a.max_rd_atomic = 1;
    CHECK(sv_qp_modify(n->qp, &a,
                       SV_ATTR_STATE | SV_ATTR_TIMEOUT | SV_ATTR_RETRY_CNT | SV_ATTR_RNR_RETRY | SV_ATTR_SQ_PSN |
                           SV_ATTR_MAX_QP_RD_ATOMIC));
    return 0;
}

int main(void) {
    SvRegistry *reg;
    SvFabric *fabric;
    Node a, b;
    SvWc wc[4];
    size_t n = 0;
    char got[16] = {0};
    const char msg[] = "hello, verbs";

    CHECK(sv_registry_new(&reg));
    CHECK(sv_registry_add_device(reg, "hca0", 1));
    CHECK(sv_registry_add_device(reg, "hca1", 2));
    CHECK(sv_fabric_loopback_new(NULL, &fabric));
    if (node_open(reg, fabric, "hca0", &a) || node_open(reg, fabric, "hca1", &b)) return 1;
    if (node_connect(&a, &b, 100, 200) || node_connect(&b, &a, 200, 100)) return 1;

    SvSge rs = {sv_buffer_addr(b.buf), 64, sv_mr_lkey(b.mr)};
    CHECK(sv_qp_post_recv(b.qp, 7, &rs, 1));
    CHECK(sv_buffer_write(a.buf, 0, (const uint8_t *)msg, sizeof msg));
    SvSge ss = {sv_buffer_addr(a.buf), sizeof msg, sv_mr_lkey(a.mr)};
    CHECK(sv_qp_post_send(a.qp, 9, &ss, 1));
    CHECK(sv_fabric_run_until_idle(fabric, 100000, NULL));

    CHECK(sv_cq_poll(b.cq, wc, 4, &n));
    if (n != 1 || wc[0].wr_id != 7 || wc[0].status != SV_WC_STATUS_SUCCESS || wc[0].byte_len != sizeof msg) {
        fprintf(stderr, "unexpected receive completion\n");
        return 1;
    }
    CHECK(sv_buffer_read(b.buf, 0, (uint8_t *)got, sizeof msg));
    if (strcmp(got, msg) != 0) return 1;

    if (sv_context_close(a.ctx) != SV_STATUS_BUSY) return 1;

    Node *nodes[2] = {&a, &b};
    for (int i = 0; i < 2; i++) {
        Node *x = nodes[i];
        CHECK(sv_qp_destroy(x->qp));
        CHECK(sv_cq_destroy(x->cq));
        CHECK(sv_mr_dereg(x->mr));
        CHECK(sv_pd_dealloc(x->pd));
        CHECK(sv_context_close(x->ctx));
        sv_buffer_free(x->buf);
    }
    sv_fabric_free(fabric);
    sv_registry_free(reg);
    printf("received: %s\n", got);
    return 0;
}
