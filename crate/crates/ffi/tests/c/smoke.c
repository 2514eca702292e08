#include <stdio.h>
#include <string.h>

#include "waveflow.h"

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke CKPT OUT.wav\n");
        return 2;
    }
    wf_model *model = NULL;
    if (wf_model_load("/nonexistent.wfck", &model) == WF_STATUS_OK || model != NULL || wf_last_error() == NULL) {
        fprintf(stderr, "missing checkpoint was accepted\n");
        return 1;
    }
    if (wf_model_load(argv[1], &model) != WF_STATUS_OK) {
        fprintf(stderr, "load: %s\n", wf_last_error());
        return 1;
    }
    wf_audio *audio = NULL;
    if (wf_synthesize(model, "ABCA", 0.0, 60, 7, &audio) != WF_STATUS_OK) {
        fprintf(stderr, "synthesize: %s\n", wf_last_error());
        return 1;
    }
    size_t n = 0;
    const float *x = wf_audio_samples(audio, &n);
    if (x == NULL || n != 60 * wf_model_block_size(model) || wf_audio_sample_rate(audio) != wf_model_sample_rate(model)) {
        fprintf(stderr, "unexpected audio shape\n");
        return 1;
    }
    double d = -1.0;
    if (wf_audio_save_wav(audio, argv[2]) != WF_STATUS_OK || wf_mcd(x, n, x, n, wf_audio_sample_rate(audio), &d) != WF_STATUS_OK) {
        fprintf(stderr, "%s\n", wf_last_error());
        return 1;
    }
    printf("{\"samples\":%zu,\"mcd\":%g,\"version\":\"%s\"}\n", n, d, wf_version());
    wf_audio_free(audio);
    wf_model_free(model);
    return d == 0.0 ? 0 : 1;
}
