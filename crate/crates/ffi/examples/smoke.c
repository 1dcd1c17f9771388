/* Plays one random-action phase-1 fight through the C interface; with a
 * checkpoint path as argument, the heal/attack slot comes from that policy. */
#include <stdio.h>
#include <stdlib.h>

#include "skillgraph.h"

static int fail(const char *what, SgStatus s) {
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, sg_last_error());
    return (int)s;
}

int main(int argc, char **argv) {
    SgWorld *world = NULL;
    SgPolicy *policy = NULL;
    SgStatus s = sg_world_new(1, SG_SPAWN_MID, 42, &world);
    if (s != SG_STATUS_OK) return fail("sg_world_new", s);
    if (argc > 1) {
        s = sg_policy_load(argv[1], NULL, 0.0, 7, &policy);
        if (s != SG_STATUS_OK) return fail("sg_policy_load", s);
    }

    size_t counts[SG_ACTION_SLOTS];
    for (int k = 0; k < (int)SG_ACTION_SLOTS; k++) {
        s = sg_skill_action_count((SgSkill)k, &counts[k]);
        if (s != SG_STATUS_OK) return fail("sg_skill_action_count", s);
    }

    double state[SG_STATE_DIM];
    SgOutcome outcome = SG_OUTCOME_ONGOING;
    unsigned seed = 1;
    while (outcome == SG_OUTCOME_ONGOING) {
        size_t actions[SG_ACTION_SLOTS];
        for (int k = 0; k < (int)SG_ACTION_SLOTS; k++) {
            seed = seed * 1103515245u + 12345u;
            actions[k] = (seed >> 16) % counts[k];
        }
        if (policy) {
            s = sg_world_state(world, state, SG_STATE_DIM);
            if (s != SG_STATUS_OK) return fail("sg_world_state", s);
            s = sg_policy_act(policy, state, SG_STATE_DIM, &actions[SG_SKILL_HA]);
            if (s != SG_STATUS_OK) return fail("sg_policy_act", s);
        }
        s = sg_world_step(world, actions, &outcome);
        if (s != SG_STATUS_OK) return fail("sg_world_step", s);
    }

    uint64_t tick = 0;
    sg_world_status(world, &tick, NULL);
    printf("version=%s ticks=%llu outcome=%d\n", sg_version(), (unsigned long long)tick, (int)outcome);

    /* Errors come back as codes, never as crashes. */
    s = sg_world_state(world, state, 3);
    printf("short_buffer=%d\n", (int)s);

    sg_policy_free(policy);
    sg_world_free(world);
    return 0;
}
