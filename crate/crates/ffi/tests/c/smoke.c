#include <stdio.h>
#include <string.h>

#include "rewardgrid.h"

static const char *SPEC =
    "[experiment]\n"
    "method = \"online\"\n"
    "[game]\n"
    "preset = \"5x5\"\n"
    "movement = \"clockwise\"\n"
    "[online]\n"
    "n_obs = 8\n";

int main(void) {
    RgGame *game = NULL;
    if (rg_game_new_from_toml(SPEC, 7, &game) != RG_STATUS_OK) {
        return 1;
    }
    int64_t best = 0;
    if (rg_game_optimal_score(game, &best) != RG_STATUS_OK || best != 294) {
        return 2;
    }
    double obs[25];
    if (rg_game_observation(game, obs, 25) != RG_STATUS_OK || obs[0] != 1.0) {
        return 3;
    }
    if (rg_game_observation(game, obs, 3) != RG_STATUS_BUFFER_TOO_SMALL) {
        return 4;
    }
    char msg[128];
    size_t n = rg_last_error_message(msg, sizeof msg);
    if (n == 0 || strlen(msg) != n) {
        return 5;
    }
    RgEpisode ep;
    if (rg_online_episode(game, 8, 0.0, 1, &ep) != RG_STATUS_OK) {
        return 6;
    }
    if (ep.status != RG_GAME_STATUS_WON || ep.score != 294 || ep.steps != 8) {
        return 7;
    }
    rg_game_free(game);
    printf("ok %s\n", rg_version());
    return 0;
}
