/* Train DGMF on synthetic data and print HR@10 / NDCG@10.
 *
 *   cc -Icrates/ffi/include crates/ffi/examples/train.c \
 *      target/release/libdncf_ffi.a -lpthread -ldl -lm -o train
 */
#include <stdio.h>

#include "dncf.h"

static int check(DncfStatus status, const char *what) {
    if (status != DNCF_STATUS_OK) {
        const char *msg = dncf_last_error();
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)status, msg ? msg : "");
        return 1;
    }
    return 0;
}

int main(void) {
    DncfDataset *data = NULL;
    DncfModel *model = NULL;
    DncfMetrics metrics;
    DncfTrainOptions opts = dncf_train_options_default();
    int rc = 1;

    opts.epochs = 3;
    opts.lr = 0.01;
    if (check(dncf_dataset_synthetic(50, 200, 4, 7, &data), "dataset")) goto done;
    if (check(dncf_model_new("dgmf", 16, "sum", data, 0, &model), "model")) goto done;
    if (check(dncf_model_train(model, data, &opts, &metrics), "train")) goto done;
    printf("dncf %s: HR@%zu %.4f NDCG@%zu %.4f over %zu users\n", dncf_version(), metrics.k, metrics.hr, metrics.k,
           metrics.ndcg, metrics.users);
    rc = 0;
done:
    dncf_model_free(model);
    dncf_dataset_free(data);
    return rc;
}
