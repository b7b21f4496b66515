"""On-device strategy: engine, audio and profiles all live on the device, so
requests need no network at all. A model release is pushed from storage, the
device downloads it, switches, and re-enrolls every owner from stored audio.

While the switch-and-re-enroll window is open the device queues incoming
requests and answers them when the window closes; that wait is the strategy's
downtime, and it is what keeps profiles and engine version in lockstep at
every instant a request is served.
"""

from __future__ import annotations

from ..domain import Outcome, RecognitionResult, VersionId
from ..metrics import RequestKind
from ..topology import DeviceNode, ModelRelease
from .common import (
    DeviceReenrollDone,
    DeviceTaskDone,
    DownloadDone,
    EnrollArrival,
    NotifyRelease,
    ReleasePayload,
    RuntimeArrival,
    WorldBase,
)


class DeviceWorld(WorldBase):
    def __init__(self, scenario, sim, storage, log):
        super().__init__(scenario, sim, storage, log)
        # per-device re-enroll cursor while an update window is open
        self._reenroll_queue: dict[str, list[str]] = {}
        self.on("enroll-arrival", self._on_enroll_arrival)
        self.on("runtime-arrival", self._on_runtime_arrival)
        self.on("release", self._on_release)
        self.on("notify-release", self._on_notify)
        self.on("download-done", self._on_download_done)
        self.on("device-task-done", self._on_task_done)
        self.on("device-reenroll-done", self._on_reenroll_done)

    def _device(self, target: str) -> DeviceNode:
        return self.devices[target.split(":", 1)[1]]

    # -- local requests

    def _on_enroll_arrival(self, target: str, msg: EnrollArrival, submitted: int | None = None) -> None:
        dev = self._device(target)
        submitted = self.sim.now if submitted is None else submitted
        if dev.updating:
            dev.deferred.append((target, msg, submitted))
            return
        dev.stored_audio[msg.user_id] = msg.samples
        engine = self.engine_for(dev.local_model)
        self.sim.schedule_in(
            engine.enroll_duration_ms(len(msg.samples)),
            target,
            DeviceTaskDone(task="enroll", ctx=_Task(msg.user_id, submitted, msg)),
        )

    def _on_runtime_arrival(self, target: str, msg: RuntimeArrival, submitted: int | None = None) -> None:
        dev = self._device(target)
        submitted = self.sim.now if submitted is None else submitted
        if dev.updating:
            dev.deferred.append((target, msg, submitted))
            return
        if not dev.profiles_for(msg.user_id):
            # nothing enrolled: reject on the spot, no engine work
            self.log.record(
                RequestKind.RUNTIME, msg.user_id, submitted, self.sim.now, Outcome.OK
            )
            return
        engine = self.engine_for(dev.local_model)
        self.sim.schedule_in(
            engine.runtime_cost_ms,
            target,
            DeviceTaskDone(task="runtime", ctx=_Task(msg.user_id, submitted, msg)),
        )

    def _on_task_done(self, target: str, msg: DeviceTaskDone) -> None:
        dev = self._device(target)
        task: _Task = msg.ctx
        engine = self.engine_for(dev.local_model)
        if msg.task == "enroll":
            profile = engine.enroll(task.user_id, task.payload.samples)
            dev.store_profile(profile, cap=1)
            self.log.log_put(self.sim.now, task.user_id, profile.version)
            self.log.record(
                RequestKind.ENROLL, task.user_id, task.submitted, self.sim.now, Outcome.OK
            )
        else:
            profiles = {task.user_id: dev.profiles_for(task.user_id)[-1]}
            engine.recognize(task.payload.sample, profiles)
            self.log.record(
                RequestKind.RUNTIME, task.user_id, task.submitted, self.sim.now, Outcome.OK
            )

    # -- releases

    def _on_release(self, target: str, msg: ReleasePayload) -> None:
        release = self.storage.register(
            msg.version_id, self.sim.now, msg.download_ms, msg.server_update_ms
        )
        # push one notification per device; storage draws the link latency
        for device_id in sorted(self.devices):
            self.send(
                self.sc.latency.device_storage,
                self.storage_rng,
                self.device_target(device_id),
                NotifyRelease(version=release.version),
            )

    def _release_for(self, version: VersionId) -> ModelRelease:
        return self.storage.releases[version.seq - 1]

    def _on_notify(self, target: str, msg: NotifyRelease) -> None:
        dev = self._device(target)
        if dev.updating:
            dev.recheck_after_update = True
            return
        self._maybe_download(target, dev)

    def _maybe_download(self, target: str, dev: DeviceNode) -> None:
        latest = self.storage.latest
        if latest == dev.local_model:
            return
        dev.updating = True
        release = self._release_for(latest)
        self.sim.schedule_in(release.download_ms, target, DownloadDone(version=latest))

    def _on_download_done(self, target: str, msg: DownloadDone) -> None:
        dev = self._device(target)
        dev.local_model = msg.version
        queue = [u for u in dev.owner_users if u in dev.stored_profiles or u in dev.stored_audio]
        self._reenroll_queue[dev.device_id] = queue
        self._next_reenroll(target, dev)

    def _next_reenroll(self, target: str, dev: DeviceNode) -> None:
        queue = self._reenroll_queue[dev.device_id]
        while queue:
            user = queue[0]
            if not dev.stored_audio.get(user):
                # profile is unusable without audio to rebuild it from
                queue.pop(0)
                dev.stored_profiles.pop(user, None)
                self.log.no_audio_events += 1
                continue
            engine = self.engine_for(dev.local_model)
            self.sim.schedule_in(
                engine.enroll_duration_ms(len(dev.stored_audio[user])),
                target,
                DeviceReenrollDone(user_id=user),
            )
            return
        self._close_update_window(target, dev)

    def _on_reenroll_done(self, target: str, msg: DeviceReenrollDone) -> None:
        dev = self._device(target)
        queue = self._reenroll_queue[dev.device_id]
        assert queue and queue[0] == msg.user_id
        queue.pop(0)
        engine = self.engine_for(dev.local_model)
        old = dev.newest_profile(msg.user_id)
        profile = engine.enroll(msg.user_id, dev.stored_audio[msg.user_id])
        dev.store_profile(profile, cap=1)
        self.log.log_put(self.sim.now, msg.user_id, profile.version)
        if old is not None:
            self.log.log_reenroll(self.sim.now, msg.user_id, old.version, profile.version)
        self._next_reenroll(target, dev)

    def _close_update_window(self, target: str, dev: DeviceNode) -> None:
        dev.updating = False
        deferred, dev.deferred = dev.deferred, []
        for tgt, msg, submitted in deferred:
            if msg.kind == "enroll-arrival":
                self._on_enroll_arrival(tgt, msg, submitted)
            else:
                self._on_runtime_arrival(tgt, msg, submitted)
        if dev.recheck_after_update:
            dev.recheck_after_update = False
            self._maybe_download(target, dev)


class _Task:
    __slots__ = ("user_id", "submitted", "payload")

    def __init__(self, user_id: str, submitted: int, payload):
        self.user_id = user_id
        self.submitted = submitted
        self.payload = payload
