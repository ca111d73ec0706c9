import { describe, expect, it } from "vitest";

import { SessionFlow } from "../src/flow.js";
import {
  FakeStudyServer,
  MemoryStorage,
  RecordingView,
  facesAlternating,
} from "./fake-server.js";

function makeFlow(server: FakeStudyServer, storage = new MemoryStorage()) {
  const view = new RecordingView();
  const flow = new SessionFlow({
    api: server.api(),
    view,
    storage,
    now: () => 1000,
  });
  return { flow, view, storage };
}

describe("session flow", () => {
  it("walks every trial and renders the report verbatim", async () => {
    const server = new FakeStudyServer(facesAlternating(6));
    const { flow, view } = makeFlow(server);

    await flow.begin("ann");
    for (let i = 0; i < 6; i += 1) {
      const state = view.last();
      expect(state.kind).toBe("trial");
      expect(state.trial!.index).toBe(i);
      expect(state.trial!.total).toBe(6);
      await flow.submit("real");
    }

    const final = view.last();
    expect(final.kind).toBe("report");
    const expected = await server.sessionReport(server.sessionId);
    expect(final.report).toEqual(expected);
    // every attack judged "real" -> APCER 100.00, BPCER 0.00
    expect(final.report!.apcer_pct).toBe("100.00");
    expect(final.report!.bpcer_pct).toBe("0.00");
    expect(final.report!.acer_pct).toBe("50.00");
  });

  it("progresses trial k to k+1 on each verdict", async () => {
    const server = new FakeStudyServer(facesAlternating(3));
    const { flow, view } = makeFlow(server);
    await flow.begin("ann");
    await flow.submit("wax");
    expect(view.last().kind).toBe("trial");
    expect(view.last().trial!.index).toBe(1);
  });

  it("records a single decision when submit is double-fired", async () => {
    const server = new FakeStudyServer(facesAlternating(2));
    const { flow, view } = makeFlow(server);
    await flow.begin("ann");

    await Promise.all([flow.submit("real"), flow.submit("wax")]);
    expect(server.verdicts.size).toBe(1);
    expect(server.verdicts.get("f000")).toBe("real");
    expect(view.last().trial!.index).toBe(1);
  });

  it("advances to the server cursor when a duplicate is rejected", async () => {
    const server = new FakeStudyServer(facesAlternating(3));
    const { flow, view } = makeFlow(server);
    await flow.begin("ann");
    server.rejectNthSubmit = 1; // server says duplicate even though UI is current
    await flow.submit("real");
    expect(view.last().kind).toBe("trial");
    expect(view.last().trial!.index).toBe(0); // server cursor never moved
    await flow.submit("wax");
    expect(view.last().trial!.index).toBe(1);
  });

  it("resumes mid-session from stored state", async () => {
    const server = new FakeStudyServer(facesAlternating(4));
    const storage = new MemoryStorage();
    const first = makeFlow(server, storage);
    await first.flow.begin("ann");
    await first.flow.submit("real");
    await first.flow.submit("wax");

    const second = makeFlow(server, storage);
    const resumed = await second.flow.resume();
    expect(resumed).toBe(true);
    expect(server.created).toBe(1); // no duplicate session
    expect(second.view.last().kind).toBe("trial");
    expect(second.view.last().trial!.index).toBe(2);
  });

  it("does not resume when nothing is stored", async () => {
    const server = new FakeStudyServer(facesAlternating(2));
    const { flow } = makeFlow(server);
    expect(await flow.resume()).toBe(false);
  });

  it("shows an error with retry and persists nothing when the server is down", async () => {
    const server = new FakeStudyServer(facesAlternating(2));
    server.failNextCreate = true;
    const { flow, view, storage } = makeFlow(server);

    await flow.begin("ann");
    const state = view.last();
    expect(state.kind).toBe("error");
    expect(storage.getItem("waxpad.session")).toBeNull();
    expect(server.created).toBe(0);

    state.retry!();
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(view.last().kind).toBe("trial");
    expect(server.created).toBe(1);
  });

  it("clears stale session ids that the server no longer knows", async () => {
    const server = new FakeStudyServer(facesAlternating(2));
    const storage = new MemoryStorage();
    storage.setItem("waxpad.session", "stale-id");
    const { flow } = makeFlow(server, storage);
    expect(await flow.resume()).toBe(false);
    expect(storage.getItem("waxpad.session")).toBeNull();
  });

  it("rejects an empty volunteer name before calling the server", async () => {
    const server = new FakeStudyServer(facesAlternating(2));
    const { flow, view } = makeFlow(server);
    await flow.begin("   ");
    expect(view.last().kind).toBe("error");
    expect(server.created).toBe(0);
  });

  it("measures elapsed time from image shown to verdict", async () => {
    const server = new FakeStudyServer(facesAlternating(1));
    const view = new RecordingView();
    let clock = 1000;
    const elapsed: number[] = [];
    const api = server.api();
    const realSubmit = api.submitDecision.bind(api);
    api.submitDecision = (sid, fid, verdict, ms) => {
      elapsed.push(ms);
      return realSubmit(sid, fid, verdict, ms);
    };
    const flow = new SessionFlow({
      api,
      view,
      storage: new MemoryStorage(),
      now: () => clock,
    });
    await flow.begin("ann");
    clock = 1750;
    await flow.submit("wax");
    expect(elapsed).toEqual([750]);
  });
});
